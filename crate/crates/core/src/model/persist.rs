//! Model documents: a few `key = value` lines (TOML), so a restarted
//! process can reuse the last fit.

use std::fs;
use std::path::Path;

use super::{ModelError, TrafficModel};

impl TrafficModel {
    pub fn to_document(&self) -> String {
        toml::to_string(self).expect("model fields are always representable")
    }

    pub fn from_document(text: &str) -> Result<TrafficModel, ModelError> {
        let m: TrafficModel = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        let ok = m.b.is_finite()
            && m.b > 0.0
            && m.k.is_finite()
            && m.k >= 0.0
            && m.epsilon > 0.0
            && m.epsilon < 1.0
            && m.quantile.is_finite();
        if !ok {
            return Err(ModelError::Parse("parameter out of range".into()));
        }
        Ok(m)
    }
}

/// Writes through a sibling temp file and a rename, so a reader never sees
/// a half-written document.
pub fn save_model(path: &Path, model: &TrafficModel) -> Result<(), ModelError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, model.to_document())?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrafficModel, ModelError> {
    TrafficModel::from_document(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Timestamp;

    #[test]
    fn document_round_trip() {
        let m = TrafficModel {
            b: 4_000.123_456_789,
            k: 0.251_234,
            epsilon: 0.05,
            quantile: 1.959_963_984_540_054,
            fitted_on: 2000,
            fitted_at: Some(Timestamp(1_304_251_200_000)),
        };
        let doc = m.to_document();
        assert!(doc.contains("b = 4000.123456789"), "{doc}");
        assert_eq!(TrafficModel::from_document(&doc).unwrap(), m);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.toml");
        save_model(&p, &m).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
    }

    #[test]
    fn rejects_bad_documents() {
        for doc in [
            "",
            "b = -1\nk = 0\nepsilon = 0.05\nquantile = 1.96\nfitted_on = 3",
            "b = 1\nk = 0\nepsilon = 1.5\nquantile = 1.96\nfitted_on = 3",
            "b = 1\nk = nan\nepsilon = 0.05\nquantile = 1.96\nfitted_on = 3",
            "b = [1]",
        ] {
            assert!(matches!(
                TrafficModel::from_document(doc),
                Err(ModelError::Parse(_))
            ));
        }
    }
}
