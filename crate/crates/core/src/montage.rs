//! Bundled 10-10 electrode positions, azimuthally projected onto the unit disk
//! (vertex at the origin, nose toward +y, the ear-level ring on the rim).

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::{Error, Result};

const STANDARD_1010: &str = include_str!("../data/standard_1010.csv");

fn table() -> &'static (Vec<String>, HashMap<String, [f64; 2]>) {
    static TABLE: OnceLock<(Vec<String>, HashMap<String, [f64; 2]>)> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut order = Vec::new();
        let mut map = HashMap::new();
        for line in STANDARD_1010.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let mut it = line.split(',');
            let (Some(label), Some(x), Some(y)) = (it.next(), it.next(), it.next()) else {
                panic!("corrupt bundled montage line: {line}");
            };
            let mut xy = [x.parse::<f64>().unwrap(), y.parse::<f64>().unwrap()];
            // six-decimal rounding can push rim electrodes a hair outside the disk
            let r = xy[0].hypot(xy[1]);
            if r > 1.0 {
                xy = [xy[0] / r, xy[1] / r];
            }
            while xy[0] * xy[0] + xy[1] * xy[1] > 1.0 {
                xy = [xy[0] * (1.0 - 1e-15), xy[1] * (1.0 - 1e-15)];
            }
            order.push(label.to_string());
            map.insert(label.to_ascii_lowercase(), xy);
        }
        (order, map)
    })
}

/// Labels of the bundled montage in file order (front to back, left to right).
pub fn standard_labels() -> &'static [String] {
    &table().0
}

/// Case-insensitive lookup of a standard label.
pub fn position(label: &str) -> Option<[f64; 2]> {
    table().1.get(&label.to_ascii_lowercase()).copied()
}

/// Positions for every label; unknown labels are an error naming the label.
pub fn positions(labels: &[String]) -> Result<Vec<[f64; 2]>> {
    labels
        .iter()
        .map(|l| {
            position(l).ok_or_else(|| {
                Error::invalid(format!(
                    "electrode `{l}` is not in the bundled 10-10 montage; supply explicit coordinates"
                ))
            })
        })
        .collect()
}

/// `n` labels spread evenly over the bundled montage.
pub fn spread_labels(n: usize) -> Result<Vec<String>> {
    let all = standard_labels();
    if n == 0 || n > all.len() {
        return Err(Error::invalid(format!(
            "montage holds {} electrodes, requested {n}",
            all.len()
        )));
    }
    Ok((0..n).map(|i| all[i * all.len() / n].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_positions_on_disk() {
        assert_eq!(standard_labels().len(), 61);
        for l in standard_labels() {
            let [x, y] = position(l).unwrap();
            assert!(x * x + y * y <= 1.0, "{l}");
        }
    }

    #[test]
    fn landmarks() {
        assert_eq!(position("Cz").unwrap(), [0.0, 0.0]);
        assert_eq!(position("fpz").unwrap(), [0.0, 1.0]);
        let [x, _] = position("T7").unwrap();
        assert!((x + 1.0).abs() < 1e-6);
        let c3 = position("C3").unwrap();
        let c4 = position("C4").unwrap();
        assert_eq!(c3[0], -c4[0]);
    }

    #[test]
    fn unknown_label_is_named() {
        let err = positions(&["Cz".into(), "Xq9".into()]).unwrap_err();
        assert!(err.to_string().contains("Xq9"));
    }

    #[test]
    fn spread_is_distinct() {
        let labels = spread_labels(16).unwrap();
        let mut sorted = labels.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 16);
    }
}
