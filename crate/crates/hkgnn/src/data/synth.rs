//! Deterministic synthetic LBSN generator. The data carries learnable
//! structure: POIs sit in a few distant spatial clusters, each user has a home
//! cluster and a favorite POI per time-of-day window, and 95% of check-ins
//! follow those preferences.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const CLUSTER_CENTERS: [(f64, f64); 4] = [
    (40.70, -74.00),
    (42.36, -71.06),
    (39.95, -75.17),
    (38.90, -77.04),
];
const JITTER_DEG: f64 = 0.01;
const CAT1: [&str; 4] = ["food", "arts", "outdoors", "shopping"];
const CAT2_POOL: [&str; 6] = ["pizza", "museum", "park", "mall", "cafe", "bar"];
const CONTACTS_POOL: [&str; 3] = ["phone", "twitter", "facebook"];
/// Fraction of check-ins that follow the user's window preference.
const RULE_PROB: f64 = 0.95;
const TZ_OFFSET_MINUTES: i32 = -300;

#[derive(Clone, Copy, Debug)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_pois: usize,
    pub n_checkins: usize,
    pub seed: u64,
}

impl SynthSpec {
    fn n_clusters(&self) -> usize {
        CLUSTER_CENTERS.len().min(self.n_pois)
    }

    /// Every generated coordinate falls inside this box.
    pub fn bounding_box(&self) -> ((f64, f64), (f64, f64)) {
        let lat_lo = CLUSTER_CENTERS.iter().map(|c| c.0).fold(f64::INFINITY, f64::min) - JITTER_DEG;
        let lat_hi = CLUSTER_CENTERS.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max) + JITTER_DEG;
        let lon_lo = CLUSTER_CENTERS.iter().map(|c| c.1).fold(f64::INFINITY, f64::min) - JITTER_DEG;
        let lon_hi = CLUSTER_CENTERS.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max) + JITTER_DEG;
        ((lat_lo, lat_hi), (lon_lo, lon_hi))
    }
}

struct SynthPoi {
    id: String,
    cluster: usize,
    lat: f64,
    lon: f64,
}

/// Window index for a local hour: four six-hour bands per day.
fn window_of_hour(hour: u32) -> usize {
    (hour / 6) as usize
}

/// Write `checkins.tsv`, `pois.csv`, and `friendships.tsv` under `out_dir`.
/// Byte-identical output for identical spec.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<[PathBuf; 3]> {
    if spec.n_users == 0 || spec.n_pois == 0 || spec.n_checkins == 0 {
        return Err(Error::Invalid("synthetic generator needs all counts ≥ 1".to_string()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nc = spec.n_clusters();
    let uw = spec.n_users.to_string().len();
    let pw = spec.n_pois.to_string().len();

    let pois: Vec<SynthPoi> = (0..spec.n_pois)
        .map(|p| {
            let cluster = p % nc;
            let (clat, clon) = CLUSTER_CENTERS[cluster];
            SynthPoi {
                id: format!("p{:0pw$}", p),
                cluster,
                lat: clat + (rng.gen::<f64>() * 2.0 - 1.0) * JITTER_DEG,
                lon: clon + (rng.gen::<f64>() * 2.0 - 1.0) * JITTER_DEG,
            }
        })
        .collect();

    let pois_path = out_dir.join("pois.csv");
    write_pois(&pois_path, &pois, spec)?;

    // Per-cluster POI lists drive user preferences.
    let mut cluster_pois: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for (i, p) in pois.iter().enumerate() {
        cluster_pois[p.cluster].push(i);
    }

    let favorite = |user: usize, window: usize| -> usize {
        let home = &cluster_pois[user % nc];
        home[(user / nc + window) % home.len()]
    };

    let checkins_path = out_dir.join("checkins.tsv");
    {
        let f = File::create(&checkins_path).map_err(|e| Error::io(checkins_path.display().to_string(), e))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "user_id\tpoi_id\ttimestamp\ttz_offset_minutes").map_err(io_err(&checkins_path))?;
        let base: NaiveDateTime = NaiveDate::from_ymd_opt(2012, 1, 2)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        for u in 0..spec.n_users {
            let quota = spec.n_checkins / spec.n_users
                + if u < spec.n_checkins % spec.n_users { 1 } else { 0 };
            // Stagger users so slots differ across users.
            let mut local = base + Duration::minutes(u as i64 * 7);
            for _ in 0..quota {
                local += Duration::minutes(rng.gen_range(180..540));
                let window = window_of_hour(chrono::Timelike::hour(&local));
                let poi = if rng.gen::<f64>() < RULE_PROB {
                    favorite(u, window)
                } else {
                    rng.gen_range(0..spec.n_pois)
                };
                writeln!(
                    w,
                    "u{:0uw$}\t{}\t{}-05:00\t{}",
                    u,
                    pois[poi].id,
                    local.format("%Y-%m-%dT%H:%M:%S"),
                    TZ_OFFSET_MINUTES
                )
                .map_err(io_err(&checkins_path))?;
            }
        }
        w.flush().map_err(io_err(&checkins_path))?;
    }

    let friendships_path = out_dir.join("friendships.tsv");
    {
        let f =
            File::create(&friendships_path).map_err(|e| Error::io(friendships_path.display().to_string(), e))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "user_a\tuser_b").map_err(io_err(&friendships_path))?;
        // Same-cluster pairs: u and u+nc share u mod nc.
        for u in 0..spec.n_users.saturating_sub(nc) {
            writeln!(w, "u{:0uw$}\tu{:0uw$}", u, u + nc).map_err(io_err(&friendships_path))?;
        }
        w.flush().map_err(io_err(&friendships_path))?;
    }

    Ok([checkins_path, pois_path, friendships_path])
}

fn write_pois(path: &Path, pois: &[SynthPoi], spec: &SynthSpec) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(f);
    writeln!(
        w,
        "poi_id,lat,lon,cat1,cat2,rating,n_comments,n_likes,n_photos,price_tier,contacts"
    )
    .map_err(io_err(path))?;
    for (p, poi) in pois.iter().enumerate() {
        // The last POI carries no side information at all; it still has
        // coordinates, so it participates in mobility facts only.
        let bare = spec.n_pois >= 2 && p == spec.n_pois - 1;
        let cat1 = if bare { String::new() } else { CAT1[poi.cluster].to_string() };
        let cat2 = if bare {
            String::new()
        } else {
            let a = CAT2_POOL[p % CAT2_POOL.len()];
            if p % 3 == 0 {
                let b = CAT2_POOL[(p + poi.cluster + 1) % CAT2_POOL.len()];
                if a == b {
                    a.to_string()
                } else {
                    format!("{a}|{b}")
                }
            } else {
                a.to_string()
            }
        };
        let rating = if bare || p % 10 == 7 {
            String::new()
        } else {
            format!("{:.1}", 3.0 + (p % 5) as f64 * 0.4 + poi.cluster as f64 * 0.05)
        };
        let n_comments = if bare { String::new() } else { format!("{}", 10 * (p + 1)) };
        let n_likes = if bare { String::new() } else { format!("{}", 5 * p + 3) };
        let n_photos = if bare || p % 9 == 4 { String::new() } else { format!("{}", 2 * p) };
        let price = if bare { String::new() } else { format!("{}", p % 4 + 1) };
        let contacts = if bare {
            String::new()
        } else {
            CONTACTS_POOL[..=(p % CONTACTS_POOL.len())].join("|")
        };
        writeln!(
            w,
            "{},{:.5},{:.5},{},{},{},{},{},{},{},{}",
            poi.id, poi.lat, poi.lon, cat1, cat2, rating, n_comments, n_likes, n_photos, price, contacts
        )
        .map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path.display().to_string(), e)
}
