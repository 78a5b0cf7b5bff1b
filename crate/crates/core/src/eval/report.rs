use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pnm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub n_images: usize,
    pub n_pixels: usize,
    pub i_auroc: f64,
    pub p_auroc: f64,
    pub accuracy: f64,
    /// Fraction of abnormal images whose predicted cells equal the true cells.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_accuracy: Option<f64>,
}

pub const CSV_HEADER: &str = "split,n_images,i_auroc,p_auroc,accuracy";

impl MetricsReport {
    pub fn csv(&self) -> String {
        format!(
            "{CSV_HEADER}\n{},{},{:.6},{:.6},{:.6}\n",
            self.split, self.n_images, self.i_auroc, self.p_auroc, self.accuracy
        )
    }

    pub fn json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.json()).map_err(|e| Error::io(&json, e))
    }
}

/// Writes an 8-bit binary PGM with `round(255·score)` per pixel.
pub fn export_heatmap(map: &Tensor, path: &Path) -> Result<()> {
    map.dims2("export_heatmap")?;
    if let Some(v) = map.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Input(format!("heatmap value {v} outside [0, 1]")));
    }
    pnm::write(path, map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixels(map: &Tensor) -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        export_heatmap(map, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        bytes[bytes.len() - map.numel()..].to_vec()
    }

    #[test]
    fn heatmap_bytes() {
        assert!(pixels(&Tensor::zeros(vec![3, 2])).iter().all(|&b| b == 0));
        assert!(pixels(&Tensor::full(vec![3, 2], 1.0)).iter().all(|&b| b == 255));
        assert_eq!(pixels(&Tensor::full(vec![1, 1], 0.5)), vec![128]);
        assert!(export_heatmap(&Tensor::full(vec![1, 1], 1.5), Path::new("/nonexistent")).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = MetricsReport {
            split: "test".into(),
            n_images: 4,
            n_pixels: 64,
            i_auroc: 1.0,
            p_auroc: 0.5,
            accuracy: 0.75,
            position_accuracy: None,
        };
        assert_eq!(r.csv(), "split,n_images,i_auroc,p_auroc,accuracy\ntest,4,1.000000,0.500000,0.750000\n");
    }
}
