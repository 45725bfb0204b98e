use std::fmt::Write as _;

use super::episode::TrajectoryRow;
use super::montecarlo::MetricsRow;
use crate::error::{Error, Result};

pub const TRAJECTORY_HEADER: &str = "t,agent_x,agent_y,agent_z,obstacle_x,obstacle_y,obstacle_z,\
measured_x,measured_y,measured_z,distance,feasible,forecast_x,forecast_y,forecast_z";

fn push_triple(line: &mut String, v: Option<[f64; 3]>) {
    match v {
        Some(p) => {
            let _ = write!(line, ",{},{},{}", p[0], p[1], p[2]);
        }
        None => line.push_str(",,,"),
    }
}

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for r in rows {
        let mut line = format!("{},{},{},{}", r.t, r.agent[0], r.agent[1], r.agent[2]);
        push_triple(&mut line, r.obstacle);
        push_triple(&mut line, r.measured);
        match r.distance {
            Some(d) => {
                let _ = write!(line, ",{d}");
            }
            None => line.push(','),
        }
        let _ = write!(line, ",{}", u8::from(r.feasible));
        push_triple(&mut line, r.forecast_mean);
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn metrics_jsonl(rows: &[MetricsRow]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out += &serde_json::to_string(r).map_err(|e| Error::Consistency(e.to_string()))?;
        out.push('\n');
    }
    Ok(out)
}
