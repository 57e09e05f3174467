//! Trial CSV files.
//!
//! Optional leading `# key=value` lines carry trial metadata (`trial_id`,
//! `patient_id`, `label`, `cohort`, `sample_rate`). The first other line is
//! the header `t,HE_acc_x,...,RF_facc_z`; each following row holds the
//! sample index and 36 values written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{SensorTrial, CHANNELS, SAMPLE_RATE_HZ, SENSORS};
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

const MIN_LEN: usize = 8;

fn header() -> String {
    let mut h = String::from("t");
    for s in SENSORS {
        for c in CHANNELS {
            write!(h, ",{s}_{c}").expect("string write");
        }
    }
    h
}

/// Serialise a trial to CSV text.
pub fn trial_to_csv(trial: &SensorTrial) -> String {
    let t = trial.len();
    let n_cols = SENSORS.len() * CHANNELS.len();
    let mut out = String::with_capacity(t * n_cols * 25);
    writeln!(out, "# trial_id={}", trial.trial_id).unwrap();
    writeln!(out, "# patient_id={}", trial.patient_id).unwrap();
    writeln!(out, "# label={}", trial.label).unwrap();
    writeln!(out, "# cohort={}", trial.cohort).unwrap();
    writeln!(out, "# sample_rate={}", trial.sample_rate).unwrap();
    out.push_str(&header());
    out.push('\n');
    let data = trial.signal.data();
    for step in 0..t {
        write!(out, "{step}").unwrap();
        for col in 0..n_cols {
            write!(out, ",{:.16e}", data[col * t + step]).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Creates missing parent directories.
pub fn write_trial(trial: &SensorTrial, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, trial_to_csv(trial)).map_err(|e| Error::io(path, e))
}

pub fn load_trial(path: &Path) -> Result<SensorTrial> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trial(&text, path)
}

pub(crate) fn parse_trial(text: &str, path: &Path) -> Result<SensorTrial> {
    let err = |row: usize, col: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        col,
        msg,
    };
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut trial_id = stem.clone();
    let mut patient_id = stem;
    let mut label = 0u8;
    let mut cohort = String::new();
    let mut sample_rate = SAMPLE_RATE_HZ;

    let n_cols = SENSORS.len() * CHANNELS.len();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((row, line)) = lines.next_if(|(_, l)| l.starts_with('#')) {
        let Some((key, value)) = line[1..].trim().split_once('=') else {
            continue;
        };
        let value = value.trim();
        match key.trim() {
            "trial_id" => trial_id = value.to_string(),
            "patient_id" => patient_id = value.to_string(),
            "cohort" => cohort = value.to_string(),
            "label" => {
                label = match value {
                    "0" => 0,
                    "1" => 1,
                    _ => return Err(err(row + 1, 0, format!("label must be 0 or 1, got {value:?}"))),
                }
            }
            "sample_rate" => {
                sample_rate = value
                    .parse()
                    .map_err(|_| err(row + 1, 0, format!("bad sample_rate {value:?}")))?
            }
            _ => {}
        }
    }

    let (row, head) = lines
        .next()
        .ok_or_else(|| err(1, 0, "missing header row".into()))?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    if cols.len() != n_cols + 1 {
        return Err(err(
            row + 1,
            cols.len(),
            format!("expected {n_cols} data columns, found {}", cols.len().saturating_sub(1)),
        ));
    }
    let expected = header();
    for (i, (got, want)) in cols.iter().zip(expected.split(',')).enumerate() {
        if *got != want {
            return Err(err(row + 1, i + 1, format!("malformed header: expected {want:?}, found {got:?}")));
        }
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n_cols];
    for (row, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_cols + 1 {
            return Err(err(
                row + 1,
                cells.len(),
                format!("expected {n_cols} data columns, found {}", cells.len().saturating_sub(1)),
            ));
        }
        for (col, cell) in cells[1..].iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| err(row + 1, col + 2, format!("non-numeric cell {:?}", cell.trim())))?;
            if !v.is_finite() {
                return Err(err(row + 1, col + 2, format!("non-finite value {v}")));
            }
            columns[col].push(v);
        }
    }
    let t = columns[0].len();
    if t < MIN_LEN {
        return Err(Error::InputTooShort {
            op: "load_trial",
            len: t,
            min: MIN_LEN,
        });
    }
    let signal = Tensor::new(&[SENSORS.len(), CHANNELS.len(), t], columns.concat())?;
    Ok(SensorTrial {
        trial_id,
        patient_id,
        label,
        cohort,
        signal,
        sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: usize) -> SensorTrial {
        let data = (0..36 * t).map(|i| ((i as f64) * 0.731).sin() / 3.0 + 1e-9 * i as f64).collect();
        SensorTrial {
            trial_id: "P01_t0".into(),
            patient_id: "P01".into(),
            label: 1,
            cohort: "PD".into(),
            signal: Tensor::new(&[4, 9, t], data).unwrap(),
            sample_rate: 100.0,
        }
    }

    #[test]
    fn header_has_36_signal_columns() {
        let h = header();
        assert_eq!(h.split(',').count(), 37);
        assert!(h.starts_with("t,HE_acc_x,HE_acc_y"));
        assert!(h.ends_with("RF_facc_y,RF_facc_z"));
    }

    #[test]
    fn round_trip_is_exact() {
        let trial = sample(16);
        let back = parse_trial(&trial_to_csv(&trial), Path::new("x.csv")).unwrap();
        assert_eq!(back, trial);
    }

    #[test]
    fn wrong_column_count() {
        let trial = sample(8);
        let text = trial_to_csv(&trial);
        let bad: String = text
            .lines()
            .map(|l| {
                if l.starts_with('#') {
                    l.to_string()
                } else {
                    l.rsplit_once(',').unwrap().0.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        let e = parse_trial(&bad, Path::new("x.csv")).unwrap_err();
        assert!(e.to_string().contains("expected 36 data columns"), "{e}");
    }

    #[test]
    fn bad_cells_name_row_and_column() {
        let text = trial_to_csv(&sample(8));
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        // row 7 is the first data row (5 metadata lines + header)
        let mut cells: Vec<String> = lines[6].split(',').map(String::from).collect();
        cells[3] = "abc".into();
        lines[6] = cells.join(",");
        match parse_trial(&lines.join("\n"), Path::new("x.csv")) {
            Err(Error::Parse { row, col, msg, .. }) => {
                assert_eq!((row, col), (7, 4));
                assert!(msg.contains("non-numeric"));
            }
            other => panic!("{other:?}"),
        }
        cells[3] = "NaN".into();
        lines[6] = cells.join(",");
        match parse_trial(&lines.join("\n"), Path::new("x.csv")) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("non-finite")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_header_and_empty_body() {
        let text = trial_to_csv(&sample(8)).replace("HE_acc_y", "HE_acc_q");
        assert!(matches!(
            parse_trial(&text, Path::new("x.csv")),
            Err(Error::Parse { .. })
        ));
        let empty = header();
        assert!(matches!(
            parse_trial(&empty, Path::new("x.csv")),
            Err(Error::InputTooShort { .. })
        ));
    }
}
