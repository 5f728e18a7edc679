//! How coordinates and timestamps become graph entities: geohash prefixes
//! at three precisions nest spatially, and local timestamps land in weekly
//! half-hour slots plus month and year.

use chrono::DateTime;
use hkgnn::data::time_partition;
use hkgnn::geo::geohash_encode;
use hkgnn::Result;

fn main() -> Result<()> {
    let spots = [
        ("Times Square", 40.7580, -73.9855),
        ("Empire State", 40.7484, -73.9857),
        ("Tokyo Tower", 35.6586, 139.7454),
    ];
    println!("geohash prefixes (4, 5, and 6 characters):");
    for (name, lat, lon) in spots {
        let g6 = geohash_encode(lat, lon, 6)?;
        println!("  {name:<13} {}  {}  {g6}", &g6[..4], &g6[..5]);
    }
    println!("nearby places share prefixes; distant ones diverge immediately\n");

    let stamps = [
        "2012-07-02T09:15:00-05:00",
        "2012-07-02T09:45:00-05:00",
        "2012-07-08T23:50:00-05:00",
        "2013-01-01T00:10:00+09:00",
    ];
    println!("weekly half-hour slots (0..335, Monday 00:00 first):");
    for s in stamps {
        let dt = DateTime::parse_from_rfc3339(s).expect("valid stamp");
        let key = time_partition(dt.timestamp(), dt.offset().local_minus_utc() / 60);
        println!("  {s}  ->  slot {:>3}, month {:>2}, year {}", key.t_d, key.t_m, key.t_y);
    }
    println!("\nthe first two stamps fall in consecutive slots of the same Monday");
    Ok(())
}
