//! JSONL trace files, one event per line; gzip when the name ends in `.gz`.
//!
//! ```text
//! {"t":0.005,"kind":"imu","accel":[0.0,0.0],"yaw_rate":0.0}
//! {"t":1.0,"kind":"gps","pos":[20.1,0.0],"var":[0.01,0.01]}
//! {"t":0.2,"kind":"lidar","pos":[4.0,0.0],"var":[0.001,0.001]}
//! {"t":0.0,"kind":"truth","pos":[0.0,0.0],"vel":[20.1,0.0],"heading":0.0}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{GroundTruthPose, Payload, Trace, TraceEvent};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum WireEvent {
    Imu { t: f64, accel: [f64; 2], yaw_rate: f64 },
    Gps { t: f64, pos: [f64; 2], var: [f64; 2] },
    Lidar { t: f64, pos: [f64; 2], var: [f64; 2] },
    Truth { t: f64, pos: [f64; 2], vel: [f64; 2], heading: f64 },
}

fn arr(v: &Vector2<f64>) -> [f64; 2] {
    [v.x, v.y]
}

impl From<&TraceEvent> for WireEvent {
    fn from(e: &TraceEvent) -> Self {
        let t = e.timestamp;
        match &e.payload {
            Payload::Imu { accel_body, yaw_rate } => WireEvent::Imu {
                t,
                accel: arr(accel_body),
                yaw_rate: *yaw_rate,
            },
            Payload::Gps { position, uncertainty } => WireEvent::Gps {
                t,
                pos: arr(position),
                var: arr(uncertainty),
            },
            Payload::Lidar { position, uncertainty } => WireEvent::Lidar {
                t,
                pos: arr(position),
                var: arr(uncertainty),
            },
            Payload::Truth(p) => WireEvent::Truth {
                t,
                pos: arr(&p.position),
                vel: arr(&p.velocity),
                heading: p.heading,
            },
        }
    }
}

impl From<WireEvent> for TraceEvent {
    fn from(w: WireEvent) -> Self {
        let v = |a: [f64; 2]| Vector2::new(a[0], a[1]);
        match w {
            WireEvent::Imu { t, accel, yaw_rate } => TraceEvent {
                timestamp: t,
                payload: Payload::Imu {
                    accel_body: v(accel),
                    yaw_rate,
                },
            },
            WireEvent::Gps { t, pos, var } => TraceEvent {
                timestamp: t,
                payload: Payload::Gps {
                    position: v(pos),
                    uncertainty: v(var),
                },
            },
            WireEvent::Lidar { t, pos, var } => TraceEvent {
                timestamp: t,
                payload: Payload::Lidar {
                    position: v(pos),
                    uncertainty: v(var),
                },
            },
            WireEvent::Truth { t, pos, vel, heading } => TraceEvent {
                timestamp: t,
                payload: Payload::Truth(GroundTruthPose {
                    position: v(pos),
                    velocity: v(vel),
                    heading,
                    timestamp: t,
                }),
            },
        }
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path)?;
    let mut out: Box<dyn Write> = if is_gz(path) {
        Box::new(BufWriter::new(GzEncoder::new(file, Compression::default())))
    } else {
        Box::new(BufWriter::new(file))
    };
    for e in trace.events() {
        serde_json::to_writer(&mut out, &WireEvent::from(e))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let input: Box<dyn Read> = if is_gz(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let mut events = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireEvent = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let event = TraceEvent::from(wire);
        if !event.timestamp.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                message: "non-finite timestamp".into(),
            });
        }
        if event.timestamp < last_t {
            return Err(Error::validation(
                format!("line {lineno}"),
                format!("timestamp {} precedes {}", event.timestamp, last_t),
            ));
        }
        last_t = event.timestamp;
        events.push(event);
    }
    Trace::new(events)
}
