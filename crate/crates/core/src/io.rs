//! JSON problem files and CSV data.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows, SpdMatrix};
use crate::model::{GenerativeModel, LinearMean, Prior, Randomizer};
use crate::queries::{InversionMap, SelectionRegion};
use crate::selprob::{Formulation, NormalizerProblem, Stage};

/// Linear Gaussian data model `S ~ N(Aβ + b, Σ_f)`. Give either the full
/// covariance or an isotropic noise scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub mean_matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_offset: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    pub d: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub n_active: usize,
    pub coords: Vec<usize>,
}

/// Randomizer covariance in canonical order, or an isotropic scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizerFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageFile {
    pub map: MapFile,
    pub region: SelectionRegion,
    pub randomizer: RandomizerFile,
    pub realized_o: Vec<f64>,
}

/// Serialized normalizer problem with optional observed data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub formulation: Formulation,
    pub model: ModelFile,
    pub stages: Vec<StageFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_s: Option<Vec<f64>>,
}

/// Prior choice in command-line and file inputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorFile {
    #[default]
    Flat,
    Gaussian { mean: f64, scale: f64 },
    LaplaceMixture { w: f64, b1: f64, b2: f64 },
}

impl PriorFile {
    pub fn to_prior(&self) -> Result<Prior> {
        match *self {
            PriorFile::Flat => Ok(Prior::Flat),
            PriorFile::Gaussian { mean, scale } => Prior::gaussian(mean, scale),
            PriorFile::LaplaceMixture { w, b1, b2 } => Prior::laplace_mixture(w, b1, b2),
        }
    }
}

impl ModelFile {
    pub fn to_model(&self) -> Result<GenerativeModel> {
        let a = from_rows(&self.mean_matrix)?;
        let mean = match &self.mean_offset {
            Some(b) => LinearMean::with_offset(a, DVector::from_vec(b.clone()))?,
            None => LinearMean::new(a),
        };
        let d = mean.matrix().nrows();
        let cov = match (&self.covariance, self.noise_scale) {
            (Some(c), None) => SpdMatrix::with_context(from_rows(c)?, "model covariance")?,
            (None, Some(s)) => SpdMatrix::isotropic(d, s)?,
            (None, None) => SpdMatrix::isotropic(d, 1.0)?,
            (Some(_), Some(_)) => return Err(Error::InvalidArgument("give either covariance or noise_scale, not both".into())),
        };
        GenerativeModel::new(Arc::new(mean), cov)
    }
}

impl StageFile {
    pub fn to_stage(&self) -> Result<Stage> {
        let map = InversionMap::new(from_rows(&self.map.d)?, from_rows(&self.map.p)?, DVector::from_vec(self.map.q.clone()), self.map.n_active, self.map.coords.clone())?;
        let p = map.opt_dim();
        let g = match (&self.randomizer.covariance, self.randomizer.scale) {
            (Some(c), None) => Randomizer::from_covariance(SpdMatrix::with_context(from_rows(c)?, "randomizer covariance")?),
            (None, Some(s)) => Randomizer::isotropic(p, s)?,
            _ => return Err(Error::InvalidArgument("randomizer needs exactly one of covariance or scale".into())),
        };
        Stage::new(map, self.region.clone(), g, DVector::from_vec(self.realized_o.clone()))
    }

    pub fn from_stage(stage: &Stage) -> Self {
        let g = &stage.randomizer;
        let randomizer = if g.covariance().is_diagonal() && g.covariance().matrix().diagonal().iter().all(|&v| v == g.scale() * g.scale()) {
            RandomizerFile { covariance: None, scale: Some(g.scale()) }
        } else {
            RandomizerFile { covariance: Some(to_rows(g.covariance().matrix())), scale: None }
        };
        StageFile {
            map: MapFile {
                d: to_rows(&stage.map.d),
                p: to_rows(&stage.map.p),
                q: stage.map.q.iter().copied().collect(),
                n_active: stage.map.n_active,
                coords: stage.map.coords.clone(),
            },
            region: stage.region.clone(),
            randomizer,
            realized_o: stage.realized_o.iter().copied().collect(),
        }
    }
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_problem(&self) -> Result<NormalizerProblem> {
        let stages = self.stages.iter().map(StageFile::to_stage).collect::<Result<Vec<_>>>()?;
        NormalizerProblem::new(self.model.to_model()?, stages, self.formulation)
    }

    pub fn observed(&self) -> Result<DVector<f64>> {
        self.observed_s
            .as_ref()
            .map(|s| DVector::from_vec(s.clone()))
            .ok_or_else(|| Error::InvalidArgument("problem file has no observed_s".into()))
    }

    /// Problem file for a linear model with mean matrix `a` and isotropic
    /// noise `σ`.
    pub fn linear(formulation: Formulation, a: &DMatrix<f64>, sigma: f64, stages: &[Stage], observed: Option<&DVector<f64>>) -> Self {
        ProblemFile {
            formulation,
            model: ModelFile { mean_matrix: to_rows(a), mean_offset: None, covariance: None, noise_scale: Some(sigma) },
            stages: stages.iter().map(StageFile::from_stage).collect(),
            observed_s: observed.map(|s| s.iter().copied().collect()),
        }
    }
}

/// Numeric CSV with a header row; returns the design of every column except
/// `response`, the response vector and the design column names.
pub fn read_regression_csv(path: &Path, response: &str) -> Result<(DMatrix<f64>, DVector<f64>, Vec<String>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let ri = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::InvalidArgument(format!("response column `{response}` not found")))?;
    let names: Vec<String> = headers.iter().enumerate().filter(|(i, _)| *i != ri).map(|(_, h)| h.clone()).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Parse(format!("row {} has {} fields, expected {}", line + 2, rec.len(), headers.len())));
        }
        for (i, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {}, column `{}`: `{field}` is not a number", line + 2, headers[i])))?;
            if i == ri {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    if n == 0 {
        return Err(Error::Parse("no data rows".into()));
    }
    let x = DMatrix::from_row_slice(n, names.len(), &xs);
    Ok((x, DVector::from_vec(ys), names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queries::lasso_query;

    #[test]
    fn problem_file_round_trip() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.2, 0.0, 1.0, 0.5, -0.3, 0.1, 0.4]);
        let y = DVector::from_vec(vec![2.0, -1.0, 0.5, 0.3]);
        let q = lasso_query(&y, &x, 0.5, 0.1, &DVector::from_vec(vec![0.3, -0.2])).unwrap();
        let stage = Stage::from_query(&q, &Randomizer::isotropic(2, 1.0).unwrap()).unwrap();
        let file = ProblemFile::linear(Formulation::PrimalFull, &x, 1.0, &[stage], Some(&y));
        let json = serde_json::to_string(&file).unwrap();
        let back = ProblemFile::from_json(&json).unwrap();
        assert_eq!(back, file);
        let prob = back.to_problem().unwrap();
        let a = prob.solve(&DVector::from_vec(vec![0.1, 0.2])).unwrap();
        assert!(a.converged);
        assert!(ProblemFile::from_json(&json.replace("\"formulation\"", "\"formulashun\"")).is_err());
    }

    #[test]
    fn csv_reading() {
        let dir = std::env::temp_dir().join(format!("selbayes-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.csv");
        std::fs::write(&path, "a,y,b\n1,2,3\n4,5,6\n").unwrap();
        let (x, y, names) = read_regression_csv(&path, "y").unwrap();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(x, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 4.0, 6.0]));
        assert_eq!(y, DVector::from_vec(vec![2.0, 5.0]));
        assert!(read_regression_csv(&path, "z").is_err());
        std::fs::write(&path, "a,y\n1,x\n").unwrap();
        assert!(read_regression_csv(&path, "y").is_err());
        let _ = std::fs::remove_dir_all(&dir);
    }
}
