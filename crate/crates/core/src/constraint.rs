//! Constraint families accepted by the schemes: matroids and knapsacks.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::knapsack::KnapsackConstraint;
use crate::matroids::{Matroid, MatroidSpec};
use crate::set::ElementSet;

/// JSON form shared by every instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ConstraintSpec {
    Uniform {
        r: usize,
    },
    Partition {
        blocks: Vec<Vec<usize>>,
        caps: Vec<usize>,
    },
    Graphic {
        vertices: usize,
        edges: Vec<[usize; 2]>,
    },
    Explicit {
        independent: Vec<Vec<usize>>,
    },
    Knapsack {
        sizes: Vec<f64>,
    },
}

impl From<MatroidSpec> for ConstraintSpec {
    fn from(m: MatroidSpec) -> Self {
        match m {
            MatroidSpec::Uniform { r } => ConstraintSpec::Uniform { r },
            MatroidSpec::Partition { blocks, caps } => ConstraintSpec::Partition { blocks, caps },
            MatroidSpec::Graphic { vertices, edges } => ConstraintSpec::Graphic { vertices, edges },
            MatroidSpec::Explicit { independent } => ConstraintSpec::Explicit { independent },
        }
    }
}

impl ConstraintSpec {
    pub fn as_matroid(&self) -> Option<MatroidSpec> {
        Some(match self.clone() {
            ConstraintSpec::Uniform { r } => MatroidSpec::Uniform { r },
            ConstraintSpec::Partition { blocks, caps } => MatroidSpec::Partition { blocks, caps },
            ConstraintSpec::Graphic { vertices, edges } => MatroidSpec::Graphic { vertices, edges },
            ConstraintSpec::Explicit { independent } => MatroidSpec::Explicit { independent },
            ConstraintSpec::Knapsack { .. } => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub enum Constraint {
    Matroid(Matroid),
    Knapsack(KnapsackConstraint),
}

impl Constraint {
    pub fn from_spec(spec: &ConstraintSpec, n: usize) -> Result<Self> {
        match spec {
            ConstraintSpec::Knapsack { sizes } => {
                if sizes.len() != n {
                    return Err(crate::Error::input(format!(
                        "knapsack lists {} sizes for {n} elements",
                        sizes.len()
                    )));
                }
                Ok(Constraint::Knapsack(KnapsackConstraint::new(
                    sizes.clone(),
                )?))
            }
            other => Ok(Constraint::Matroid(Matroid::from_spec(
                &other.as_matroid().expect("matroid kinds"),
                n,
            )?)),
        }
    }

    pub fn to_spec(&self) -> ConstraintSpec {
        match self {
            Constraint::Matroid(m) => m.spec().clone().into(),
            Constraint::Knapsack(k) => ConstraintSpec::Knapsack {
                sizes: k.sizes().to_vec(),
            },
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Constraint::Matroid(m) => m.n(),
            Constraint::Knapsack(k) => k.n(),
        }
    }

    pub fn is_feasible(&self, s: ElementSet) -> bool {
        match self {
            Constraint::Matroid(m) => m.independent(s),
            Constraint::Knapsack(k) => k.fits(s),
        }
    }

    pub fn in_polytope(&self, x: &[f64], tol: f64) -> Result<bool> {
        match self {
            Constraint::Matroid(m) => m.in_polytope(x, tol),
            Constraint::Knapsack(k) => Ok(k.in_knapsack_polytope(x, tol)),
        }
    }

    pub fn as_matroid(&self) -> Option<&Matroid> {
        match self {
            Constraint::Matroid(m) => Some(m),
            Constraint::Knapsack(_) => None,
        }
    }

    pub fn as_knapsack(&self) -> Option<&KnapsackConstraint> {
        match self {
            Constraint::Knapsack(k) => Some(k),
            Constraint::Matroid(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_kind() {
        let text = r#"[
            {"kind":"uniform","r":2},
            {"kind":"partition","blocks":[[0,1],[2]],"caps":[1,1]},
            {"kind":"graphic","vertices":4,"edges":[[0,1],[1,2],[2,3]]},
            {"kind":"explicit","independent":[[],[0],[1],[2]]},
            {"kind":"knapsack","sizes":[0.3,0.7,0.2]}
        ]"#;
        let specs: Vec<ConstraintSpec> = serde_json::from_str(text).unwrap();
        for spec in &specs {
            let c = Constraint::from_spec(spec, 3).unwrap();
            assert_eq!(&c.to_spec(), spec);
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = serde_json::from_str::<ConstraintSpec>(r#"{"kind":"uniform","rank":2}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("rank") || err.contains("`r`"), "{err}");
    }
}
