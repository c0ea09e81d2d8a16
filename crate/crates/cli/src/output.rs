//! CSV emission. Floating-point fields use 17 significant digits so that
//! every value parses back to the same double.

use std::io::Write;

use gpo_core::trainer::{TrainLog, TrainRecord};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn record_fields(r: &TrainRecord) -> Vec<String> {
    let mut out = vec![r.iteration.to_string(), r.timesteps.to_string(), r.guider_episodes.to_string()];
    out.extend([r.behavior_return, r.learner_return, r.learner_return_std, r.alpha, r.rho_pi_dev_first].map(fmt_f64));
    out.extend(r.loss.values().map(fmt_f64));
    out
}

pub fn write_log<W: Write>(w: W, log: &TrainLog) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TrainRecord::columns())?;
    for r in &log.records {
        out.write_record(record_fields(r))?;
    }
    out.flush()?;
    Ok(())
}

pub const SUMMARY_COLUMNS: [&str; 4] = ["algorithm", "seeds", "final_return_mean", "final_return_std"];

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn write_summary<W: Write>(w: W, rows: &[(String, Vec<f64>)]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_COLUMNS)?;
    for (algo, finals) in rows {
        let (mean, std) = mean_std(finals);
        out.write_record([algo.clone(), finals.len().to_string(), fmt_f64(mean), fmt_f64(std)])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn header_matches_columns() {
        let mut buf = Vec::new();
        write_log(&mut buf, &TrainLog::default()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.trim_end(), TrainRecord::columns().join(","));
    }

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }
}
