//! Problem files: `-(y'/r)' + q y = lambda p y` on `[0, 1]` with separated
//! boundary conditions, and the pipeline to a discretized pencil.

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, BoundaryCondition, PencilDiscretization};
use crate::error::{Error, Result};
use crate::measures::{CompositeMeasure, SelfSimilarPart};
use crate::reduction::{pushforward_params, transform_measure};
use crate::selfsim::{
    check_shared_ifs, iterate, MonotoneMap, MonotonePrimitive, PiecewiseLinear, SelfSimilarParams,
};

pub const DEFAULT_DEPTH: usize = 8;

/// Products `d_i d'_i` entering the right-hand side of the subadditivity
/// inequality for the Cantor string: cell weights `1/3` against scalings
/// `1/2, 0, 1/2`.
pub const CANTOR_LEMMA_PRODUCTS: [f64; 3] = [1.0 / 6.0, 0.0, 1.0 / 6.0];

/// The primitive `R` of `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PrimitiveSpec {
    Named(NamedPrimitive),
    SelfSimilar(MonotonePrimitive),
    Piecewise(PiecewiseLinear),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedPrimitive {
    Lebesgue,
}

impl PrimitiveSpec {
    pub fn map(&self) -> Box<dyn MonotoneMap + '_> {
        match self {
            PrimitiveSpec::Named(NamedPrimitive::Lebesgue) => Box::new(PiecewiseLinear::identity()),
            PrimitiveSpec::SelfSimilar(m) => Box::new(m.clone()),
            PrimitiveSpec::Piecewise(p) => Box::new(p.clone()),
        }
    }
}

/// `q`: a measure, or a constant multiple of Lebesgue measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PotentialSpec {
    Constant(f64),
    Measure(CompositeMeasure),
}

impl Default for PotentialSpec {
    fn default() -> Self {
        PotentialSpec::Constant(0.0)
    }
}

impl PotentialSpec {
    pub fn measure(&self) -> CompositeMeasure {
        match self {
            PotentialSpec::Constant(c) if *c == 0.0 => CompositeMeasure::zero(),
            PotentialSpec::Constant(c) => CompositeMeasure::constant(*c),
            PotentialSpec::Measure(m) => m.clone(),
        }
    }
}

/// `p`: the Stieltjes measure of a self-similar function, or a composite
/// measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    SelfSimilar(SelfSimilarParams),
    Measure(CompositeMeasure),
}

impl WeightSpec {
    pub fn measure(&self) -> CompositeMeasure {
        match self {
            WeightSpec::SelfSimilar(p) => CompositeMeasure::from_selfsim(p.clone(), 1.0),
            WeightSpec::Measure(m) => m.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UnitarySpec {
    Named(NamedBoundary),
    Angles { theta: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedBoundary {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    #[serde(rename = "U")]
    pub u: UnitarySpec,
}

impl BoundarySpec {
    pub fn dirichlet() -> Self {
        BoundarySpec { u: UnitarySpec::Named(NamedBoundary::Dirichlet) }
    }

    pub fn neumann() -> Self {
        BoundarySpec { u: UnitarySpec::Named(NamedBoundary::Neumann) }
    }

    pub fn condition(&self) -> Result<BoundaryCondition> {
        match self.u {
            UnitarySpec::Named(NamedBoundary::Dirichlet) => Ok(BoundaryCondition::dirichlet()),
            UnitarySpec::Named(NamedBoundary::Neumann) => Ok(BoundaryCondition::neumann()),
            UnitarySpec::Angles { theta: [t0, t1] } => BoundaryCondition::from_angles(t0, t1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub r: PrimitiveSpec,
    #[serde(default)]
    pub q: PotentialSpec,
    pub p: WeightSpec,
    pub bc: BoundarySpec,
    #[serde(default = "unit_mass")]
    pub r_mass: f64,
    #[serde(default = "default_depth")]
    pub depth: usize,
}

fn unit_mass() -> f64 {
    1.0
}

fn default_depth() -> usize {
    DEFAULT_DEPTH
}

/// Coefficients on the Lebesgue base.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transformed {
    pub r_mass: f64,
    pub qtilde: CompositeMeasure,
    pub ptilde: CompositeMeasure,
    /// Self-similar parameters of the transformed weight's primitive, when
    /// the weight and `R` share one IFS (or `r` is Lebesgue).
    pub ptilde_params: Option<SelfSimilarParams>,
}

impl Problem {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameters(format!("problem file: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }

    pub fn lebesgue_string(p: WeightSpec, bc: BoundarySpec) -> Self {
        Problem {
            r: PrimitiveSpec::Named(NamedPrimitive::Lebesgue),
            q: PotentialSpec::default(),
            p,
            bc,
            r_mass: 1.0,
            depth: DEFAULT_DEPTH,
        }
    }

    /// Neumann problem with `r = dP_k`, the `k`-th piecewise-linear iterate
    /// of the Cantor ladder, and `p` the Cantor measure.
    pub fn cantor_counterexample(k_iter: usize) -> Result<Self> {
        let cantor = SelfSimilarParams::cantor_ladder();
        let r = iterate(&cantor, k_iter, &PiecewiseLinear::identity())?;
        Ok(Problem {
            r: PrimitiveSpec::Piecewise(r),
            q: PotentialSpec::default(),
            p: WeightSpec::SelfSimilar(cantor),
            bc: BoundarySpec::neumann(),
            r_mass: 1.0,
            depth: DEFAULT_DEPTH,
        })
    }

    /// Transports `q` and `p` through `R`.
    ///
    /// Self-similar parts sharing the IFS of a self-similar `R` are moved
    /// exactly through [`pushforward_params`]; everything else goes through
    /// [`transform_measure`] at `depth`.
    pub fn transform(&self, depth: usize) -> Result<Transformed> {
        let (ptilde, ptilde_params) = self.transport(&self.p.measure(), depth)?;
        let (qtilde, _) = self.transport(&self.q.measure(), depth)?;
        Ok(Transformed { r_mass: self.r_mass, qtilde, ptilde, ptilde_params })
    }

    fn transport(&self, mu: &CompositeMeasure, depth: usize) -> Result<(CompositeMeasure, Option<SelfSimilarParams>)> {
        let exact = match (&self.r, &mu.selfsim) {
            (PrimitiveSpec::Named(NamedPrimitive::Lebesgue), Some(part)) => Some(part.params.clone()),
            (PrimitiveSpec::SelfSimilar(r), Some(part)) if check_shared_ifs(r.params(), &part.params).is_ok() => {
                Some(pushforward_params(r, &part.params)?)
            }
            _ => None,
        };
        let map = self.r.map();
        match (exact, &mu.selfsim) {
            (Some(params), Some(part)) => {
                let rest = CompositeMeasure { selfsim: None, ..mu.clone() };
                let mut out = transform_measure(&rest, map.as_ref(), depth)?;
                out.selfsim = Some(SelfSimilarPart { params: params.clone(), scale: part.scale });
                let out = CompositeMeasure::new(out.atoms, out.density, out.selfsim)?;
                Ok((out, Some(params)))
            }
            _ => Ok((transform_measure(mu, map.as_ref(), depth)?, None)),
        }
    }

    pub fn discretize(&self, depth: usize) -> Result<PencilDiscretization> {
        let t = self.transform(depth)?;
        assemble(t.r_mass, &t.qtilde, &t.ptilde, self.bc.condition()?, depth)
    }

    /// Weights `d_i` of `R` and scalings `d'_i` of `P` when both are
    /// self-similar on one IFS (`r` Lebesgue counts as `d_i = a_i`).
    pub fn scaling_data(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let p = match &self.p {
            WeightSpec::SelfSimilar(p) => p,
            WeightSpec::Measure(m) => &m.selfsim.as_ref()?.params,
        };
        match &self.r {
            PrimitiveSpec::Named(NamedPrimitive::Lebesgue) => Some((p.a.clone(), p.dprime.clone())),
            PrimitiveSpec::SelfSimilar(r) if check_shared_ifs(r.params(), p).is_ok() => {
                Some((r.weights().to_vec(), p.dprime.clone()))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANTOR_CANTOR: &str = r#"{
        "r": {"n":3,"a":[0.3333333333333333,0.3333333333333333,0.33333333333333337],
              "dprime":[0.5,0,0.5],"betaprime":[0,0.5,0.5],"p0":0,"p1":1},
        "p": {"n":3,"a":[0.3333333333333333,0.3333333333333333,0.33333333333333337],
              "dprime":[0.5,0,0.5],"betaprime":[0,0.5,0.5],"p0":0,"p1":1},
        "bc": {"U": "neumann"}
    }"#;

    #[test]
    fn parses_with_defaults() {
        let pr = Problem::from_json(CANTOR_CANTOR).unwrap();
        assert_eq!(pr.q, PotentialSpec::Constant(0.0));
        assert_eq!(pr.r_mass, 1.0);
        assert_eq!(pr.depth, DEFAULT_DEPTH);
        assert!(matches!(pr.r, PrimitiveSpec::SelfSimilar(_)));
        assert!(matches!(pr.p, WeightSpec::SelfSimilar(_)));
    }

    #[test]
    fn round_trip() {
        let pr = Problem::from_json(CANTOR_CANTOR).unwrap();
        let again = Problem::from_json(&pr.to_json()).unwrap();
        assert_eq!(pr, again);
        let text = r#"{"r":"lebesgue","q":-3.5,"p":{"atoms":[[0.4,1],[0.6,1]]},
                       "bc":{"U":{"theta":[1.0,2.0]}},"r_mass":2,"depth":5}"#;
        let pr = Problem::from_json(text).unwrap();
        assert_eq!(pr, Problem::from_json(&pr.to_json()).unwrap());
        assert!(matches!(pr.bc.condition().unwrap().left, crate::assembly::EndCondition::Robin(_)));
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(Problem::from_json("{").is_err());
        assert!(Problem::from_json(r#"{"r":"lebesgue","p":{"atoms":[[0.5,1]]}}"#).is_err());
        assert!(Problem::from_json(r#"{"r":"lebesgue","p":{"atomz":[]},"bc":{"U":"neumann"}}"#).is_err());
        assert!(Problem::from_json(r#"{"r":"circle","p":{},"bc":{"U":"neumann"}}"#).is_err());
    }

    #[test]
    fn cantor_over_cantor_transforms_to_lebesgue() {
        let pr = Problem::from_json(CANTOR_CANTOR).unwrap();
        let t = pr.transform(6).unwrap();
        let params = t.ptilde_params.unwrap();
        assert_eq!(params.a, vec![0.5, 0.5]);
        assert_eq!(params.dprime, vec![0.5, 0.5]);
        assert_eq!(pr.scaling_data().unwrap().0, vec![0.5, 0.0, 0.5]);
    }
}
