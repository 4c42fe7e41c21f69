//! The prepared CSV: one row per (hour, district) with weather attached.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::aggregate::{HourlyDistrictRow, WeatherFeatures};
use crate::error::{Error, Result};
use crate::time;

pub const PREPARED_HEADER: [&str; 11] = [
    "DATE_TIME",
    "DISTANCE_LOC",
    "MINIMUM_SPEED",
    "MAXIMUM_SPEED",
    "AVERAGE_SPEED",
    "NUMBER_OF_VEHICLES",
    "T2M",
    "QV2M",
    "WD2M",
    "WS2M",
    "PRECTOTCORR",
];

pub fn write_prepared<W: Write>(rows: &[HourlyDistrictRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PREPARED_HEADER)?;
    for r in rows {
        let fields = [
            time::format_csv(r.timestamp),
            r.district.clone(),
            r.min_speed.to_string(),
            r.max_speed.to_string(),
            r.avg_speed.to_string(),
            r.num_vehicles.to_string(),
            r.weather.t2m.to_string(),
            r.weather.qv2m.to_string(),
            r.weather.wd.to_string(),
            r.weather.ws.to_string(),
            r.weather.precip.to_string(),
        ];
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io("<prepared output>", e))?;
    Ok(())
}

/// Write atomically: the file appears only once fully written.
pub fn write_prepared_file(rows: &[HourlyDistrictRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("csv.partial");
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut buf = BufWriter::new(file);
    write_prepared(rows, &mut buf)?;
    buf.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(buf);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_prepared<R: Read>(input: R) -> Result<Vec<HourlyDistrictRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let cols: Vec<usize> = PREPARED_HEADER
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name) || (*name == "WD2M" && h == "WD10M") || (*name == "WS2M" && h == "WS10M"))
                .ok_or_else(|| Error::Header {
                    path: "<prepared>".into(),
                    reason: format!("missing column {name}"),
                })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::InvalidArgument(format!("prepared row {}: bad {what}", line + 2));
        let f = |i: usize| rec.get(cols[i]).unwrap_or("");
        let num = |i: usize| f(i).parse::<f64>().map_err(|_| bad(PREPARED_HEADER[i]));
        rows.push(HourlyDistrictRow {
            timestamp: time::parse_hour(f(0)).ok_or_else(|| bad("DATE_TIME"))?,
            district: f(1).to_string(),
            min_speed: num(2)?,
            max_speed: num(3)?,
            avg_speed: num(4)?,
            num_vehicles: num(5)?,
            weather: WeatherFeatures {
                t2m: num(6)?,
                qv2m: num(7)?,
                wd: num(8)?,
                ws: num(9)?,
                precip: num(10)?,
            },
        });
    }
    Ok(rows)
}

pub fn read_prepared_file(path: impl AsRef<Path>) -> Result<Vec<HourlyDistrictRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_prepared(std::io::BufReader::new(file))
}
