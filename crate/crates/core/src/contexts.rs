//! Model contexts: labeled perturbations of the nominal vehicle parameters.
//!
//! Labels 0-9 follow the fault catalogue used for the experiments (nominal,
//! degraded and broken thruster, surge and yaw damping changes, then random
//! damping and thruster perturbations). Labels from 10 on alternate between
//! random damping and random thruster perturbations.

use std::path::Path;

use nalgebra::{Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydro::{VehicleParams, DOF_NAMES};

/// Bounds of the uniform factors drawn for random contexts.
pub const RANDOM_FACTOR_RANGE: (f64, f64) = (0.5, 3.0);

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output for counter `index` of the stream starting at `seed`.
/// Seeds derived this way do not depend on how many are drawn.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextKind {
    Nominal,
    /// Multiplies one thruster coefficient (zero-based index); 0 means broken.
    ThrusterScale {
        thruster: usize,
        factor: f64,
    },
    /// Scales the damping of the given DOFs in every `D_i`.
    DampingScale {
        axes: Vec<usize>,
        factor: f64,
    },
    RandomDamping {
        seed: u64,
    },
    RandomThrusters {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSpec {
    pub label: u32,
    #[serde(flatten)]
    pub kind: ContextKind,
    pub description: String,
}

/// One multiplicative factor actually applied by a perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedFactor {
    pub coefficient: String,
    pub factor: f64,
}

/// Magnitudes of the hand-designed faults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultMagnitudes {
    pub thruster_damage: f64,
    pub damping_change: f64,
}

impl Default for FaultMagnitudes {
    fn default() -> Self {
        FaultMagnitudes {
            thruster_damage: 0.4,
            damping_change: 2.5,
        }
    }
}

impl ContextSpec {
    fn check(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidPerturbation {
            label: self.label,
            reason,
        };
        match &self.kind {
            ContextKind::ThrusterScale { factor, .. }
                if !(factor.is_finite() && *factor >= 0.0) =>
            {
                Err(bad(format!("thruster factor {factor} must be >= 0")))
            }
            ContextKind::DampingScale { axes, factor } => {
                if !(factor.is_finite() && *factor > 0.0) {
                    return Err(bad(format!("damping factor {factor} must be > 0")));
                }
                if let Some(a) = axes.iter().find(|&&a| a >= 6) {
                    return Err(bad(format!("damping axis {a} out of range")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Applies the perturbation to `nominal`, returning the perturbed copy
    /// together with every factor that was applied.
    pub fn apply(&self, nominal: &VehicleParams) -> Result<(VehicleParams, Vec<ResolvedFactor>)> {
        self.check()?;
        let mut params = nominal.clone();
        let mut factors = Vec::new();
        match &self.kind {
            ContextKind::Nominal => {}
            ContextKind::ThrusterScale { thruster, factor } => {
                let k = params.thruster_coeffs.get_mut(*thruster).ok_or_else(|| {
                    Error::InvalidPerturbation {
                        label: self.label,
                        reason: format!("no thruster {}", thruster + 1),
                    }
                })?;
                *k *= factor;
                factors.push(ResolvedFactor {
                    coefficient: format!("k{}", thruster + 1),
                    factor: *factor,
                });
            }
            ContextKind::DampingScale { axes, factor } => {
                let mut scale = Vector6::repeat(1.0);
                for &a in axes {
                    scale[a] = *factor;
                    factors.push(ResolvedFactor {
                        coefficient: format!("D*[{0},{0}] ({1})", a, DOF_NAMES[a]),
                        factor: *factor,
                    });
                }
                for d in params.damping.iter_mut() {
                    *d = congruence(d, &scale);
                }
            }
            ContextKind::RandomDamping { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                for (i, d) in params.damping.iter_mut().enumerate() {
                    let mut scale = Vector6::repeat(1.0);
                    for a in 0..6 {
                        if d[(a, a)] != 0.0 {
                            scale[a] = draw_factor(&mut rng);
                            factors.push(ResolvedFactor {
                                coefficient: format!("D{}[{a},{a}]", i + 1),
                                factor: scale[a],
                            });
                        }
                    }
                    *d = congruence(d, &scale);
                }
            }
            ContextKind::RandomThrusters { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                for (j, k) in params.thruster_coeffs.iter_mut().enumerate() {
                    let f = draw_factor(&mut rng);
                    *k *= f;
                    factors.push(ResolvedFactor {
                        coefficient: format!("k{}", j + 1),
                        factor: f,
                    });
                }
            }
        }
        params.validate().map_err(|e| Error::InvalidPerturbation {
            label: self.label,
            reason: e.to_string(),
        })?;
        Ok((params, factors))
    }
}

/// Perturbed copy of `nominal` for this context.
pub fn materialize(spec: &ContextSpec, nominal: &VehicleParams) -> Result<VehicleParams> {
    spec.apply(nominal).map(|(p, _)| p)
}

fn draw_factor(rng: &mut impl Rng) -> f64 {
    rng.random_range(RANDOM_FACTOR_RANGE.0..=RANDOM_FACTOR_RANGE.1)
}

/// `S D S` with `S = diag(sqrt(scale))`: diagonal entries scale by exactly
/// `scale[a]` and positive semi-definiteness is preserved.
fn congruence(d: &Matrix6<f64>, scale: &Vector6<f64>) -> Matrix6<f64> {
    let s = scale.map(f64::sqrt);
    Matrix6::from_fn(|i, j| {
        if i == j {
            d[(i, i)] * scale[i]
        } else {
            d[(i, j)] * s[i] * s[j]
        }
    })
}

/// Ordered set of contexts with unique labels, label 0 nominal.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextRegistry {
    pub master_seed: u64,
    pub contexts: Vec<ContextSpec>,
}

impl ContextRegistry {
    pub fn build(n_classes: usize, master_seed: u64) -> Result<Self> {
        Self::build_with(n_classes, master_seed, FaultMagnitudes::default())
    }

    pub fn build_with(n_classes: usize, master_seed: u64, faults: FaultMagnitudes) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::Config("at least one context is required".into()));
        }
        let contexts = (0..n_classes as u32)
            .map(|label| {
                let seed = derive_seed(master_seed, label as u64);
                let (kind, description) = match label {
                    0 => (ContextKind::Nominal, "nominal model".to_string()),
                    1 => (
                        ContextKind::ThrusterScale {
                            thruster: 0,
                            factor: faults.thruster_damage,
                        },
                        "thruster 1 damage".into(),
                    ),
                    2 => (
                        ContextKind::DampingScale {
                            axes: vec![0],
                            factor: faults.damping_change,
                        },
                        "damping change - surge".into(),
                    ),
                    3 => (
                        ContextKind::ThrusterScale {
                            thruster: 0,
                            factor: 0.0,
                        },
                        "thruster 1 broken".into(),
                    ),
                    4 => (
                        ContextKind::DampingScale {
                            axes: vec![5],
                            factor: faults.damping_change,
                        },
                        "damping change - yaw".into(),
                    ),
                    5..=7 => (
                        ContextKind::RandomDamping { seed },
                        format!("random damping change {}", label - 4),
                    ),
                    8 | 9 => (
                        ContextKind::RandomThrusters { seed },
                        format!("random thrusters configuration {}", label - 7),
                    ),
                    l if l % 2 == 0 => (
                        ContextKind::RandomDamping { seed },
                        format!("random damping change {}", (l - 10) / 2 + 4),
                    ),
                    l => (
                        ContextKind::RandomThrusters { seed },
                        format!("random thrusters configuration {}", (l - 11) / 2 + 3),
                    ),
                };
                ContextSpec {
                    label,
                    kind,
                    description,
                }
            })
            .collect();
        Ok(ContextRegistry {
            master_seed,
            contexts,
        })
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .contexts
            .first()
            .ok_or_else(|| Error::Config("empty registry".into()))?;
        if first.label != 0 || first.kind != ContextKind::Nominal {
            return Err(Error::Config("label 0 must be the nominal context".into()));
        }
        let mut labels: Vec<u32> = self.contexts.iter().map(|c| c.label).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate context label".into()));
        }
        Ok(())
    }

    /// Materializes every context against `nominal`, in registry order.
    pub fn materialize_all(&self, nominal: &VehicleParams) -> Result<Vec<VehicleParams>> {
        self.contexts
            .iter()
            .map(|c| materialize(c, nominal))
            .collect()
    }

    /// Provenance record: every context with its resolved factors.
    pub fn export(&self, nominal: &VehicleParams) -> Result<String> {
        let contexts = self
            .contexts
            .iter()
            .map(|spec| {
                let (_, factors) = spec.apply(nominal)?;
                Ok(ContextRecord {
                    spec: spec.clone(),
                    factors,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let record = RegistryRecord {
            master_seed: self.master_seed,
            context: contexts,
        };
        toml::to_string(&record).map_err(|e| Error::format("registry record", e.to_string()))
    }

    /// Parses a provenance record back into a registry.
    pub fn parse(text: &str) -> Result<Self> {
        let record: RegistryRecord =
            toml::from_str(text).map_err(|e| Error::format("registry record", e.to_string()))?;
        let registry = ContextRegistry {
            master_seed: record.master_seed,
            contexts: record.context.into_iter().map(|c| c.spec).collect(),
        };
        registry.validate()?;
        for spec in &registry.contexts {
            spec.check()?;
        }
        Ok(registry)
    }

    pub fn save(&self, nominal: &VehicleParams, path: &Path) -> Result<()> {
        std::fs::write(path, self.export(nominal)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::binio::read_text(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryRecord {
    master_seed: u64,
    context: Vec<ContextRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ContextRecord {
    #[serde(flatten)]
    spec: ContextSpec,
    #[serde(default)]
    factors: Vec<ResolvedFactor>,
}

/// Flat vector of every perturbable coefficient (mass, damping, thrusters).
pub fn coefficient_vector(p: &VehicleParams) -> Vec<f64> {
    let mut v: Vec<f64> = p.mass.iter().copied().collect();
    for d in &p.damping {
        v.extend(d.iter().copied());
    }
    v.extend(&p.thruster_coeffs);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_is_bitwise_identity() {
        let nominal = VehicleParams::nominal();
        let reg = ContextRegistry::build(1, 9).unwrap();
        assert_eq!(materialize(&reg.contexts[0], &nominal).unwrap(), nominal);
    }

    #[test]
    fn broken_thruster_has_zero_coefficient() {
        let nominal = VehicleParams::nominal();
        let spec = ContextSpec {
            label: 3,
            kind: ContextKind::ThrusterScale {
                thruster: 0,
                factor: 0.0,
            },
            description: "thruster 1 broken".into(),
        };
        let p = materialize(&spec, &nominal).unwrap();
        assert_eq!(p.thruster_coeffs[0], 0.0);
        assert_eq!(p.thruster_coeffs[1..], nominal.thruster_coeffs[1..]);
    }

    #[test]
    fn random_kinds_are_deterministic() {
        let nominal = VehicleParams::nominal();
        for kind in [
            ContextKind::RandomDamping { seed: 77 },
            ContextKind::RandomThrusters { seed: 77 },
        ] {
            let spec = ContextSpec {
                label: 5,
                kind,
                description: String::new(),
            };
            assert_eq!(spec.apply(&nominal).unwrap(), spec.apply(&nominal).unwrap());
        }
    }

    #[test]
    fn damping_scale_hits_only_selected_diagonal() {
        let nominal = VehicleParams::nominal();
        let reg = ContextRegistry::build(3, 1).unwrap();
        let p = materialize(&reg.contexts[2], &nominal).unwrap();
        for (d, d0) in p.damping.iter().zip(&nominal.damping) {
            assert_eq!(d[(0, 0)], d0[(0, 0)] * 2.5);
            assert_eq!(d[(1, 1)], d0[(1, 1)]);
            assert_eq!(d[(5, 5)], d0[(5, 5)]);
        }
    }

    #[test]
    fn registry_labels_follow_catalogue() {
        let reg = ContextRegistry::build(3, 0).unwrap();
        let labels: Vec<u32> = reg.contexts.iter().map(|c| c.label).collect();
        assert_eq!(labels, vec![0, 1, 2]);

        let reg = ContextRegistry::build(10, 0).unwrap();
        let descriptions: Vec<&str> = reg
            .contexts
            .iter()
            .map(|c| c.description.as_str())
            .collect();
        assert_eq!(
            descriptions,
            [
                "nominal model",
                "thruster 1 damage",
                "damping change - surge",
                "thruster 1 broken",
                "damping change - yaw",
                "random damping change 1",
                "random damping change 2",
                "random damping change 3",
                "random thrusters configuration 1",
                "random thrusters configuration 2",
            ]
        );

        let reg = ContextRegistry::build(100, 0).unwrap();
        assert_eq!(reg.len(), 100);
        assert!(reg.contexts[10..].iter().all(|c| matches!(
            c.kind,
            ContextKind::RandomDamping { .. } | ContextKind::RandomThrusters { .. }
        )));
    }

    #[test]
    fn registries_share_common_prefix() {
        let small = ContextRegistry::build(10, 42).unwrap();
        let large = ContextRegistry::build(100, 42).unwrap();
        assert_eq!(small.contexts[..], large.contexts[..10]);
    }

    #[test]
    fn all_contexts_valid_bounded_and_distinct() {
        let nominal = VehicleParams::nominal();
        let reg = ContextRegistry::build(100, 2024).unwrap();
        let mut vectors = Vec::new();
        for spec in &reg.contexts {
            let (p, factors) = spec.apply(&nominal).unwrap();
            p.validate().unwrap();
            if spec.label >= 5 {
                assert!(!factors.is_empty());
                for f in &factors {
                    assert!((0.5..=3.0).contains(&f.factor), "{f:?}");
                }
            }
            vectors.push(coefficient_vector(&p));
        }
        for i in 0..vectors.len() {
            for j in i + 1..vectors.len() {
                let diff = vectors[i]
                    .iter()
                    .zip(&vectors[j])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(diff > 1e-9, "classes {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn invalid_factors_are_rejected() {
        let nominal = VehicleParams::nominal();
        let spec = ContextSpec {
            label: 1,
            kind: ContextKind::ThrusterScale {
                thruster: 0,
                factor: -1.0,
            },
            description: String::new(),
        };
        assert!(matches!(
            spec.apply(&nominal),
            Err(Error::InvalidPerturbation { .. })
        ));
        let spec = ContextSpec {
            label: 1,
            kind: ContextKind::ThrusterScale {
                thruster: 9,
                factor: 0.5,
            },
            description: String::new(),
        };
        assert!(matches!(
            spec.apply(&nominal),
            Err(Error::InvalidPerturbation { .. })
        ));
        let spec = ContextSpec {
            label: 1,
            kind: ContextKind::DampingScale {
                axes: vec![1],
                factor: 0.0,
            },
            description: String::new(),
        };
        assert!(matches!(
            spec.apply(&nominal),
            Err(Error::InvalidPerturbation { .. })
        ));
    }

    #[test]
    fn export_round_trip() {
        let nominal = VehicleParams::nominal();
        let reg = ContextRegistry::build(12, 5).unwrap();
        let text = reg.export(&nominal).unwrap();
        assert!(text.contains("thruster 1 broken"));
        assert_eq!(ContextRegistry::parse(&text).unwrap(), reg);
    }

    #[test]
    fn parse_rejects_missing_nominal() {
        let nominal = VehicleParams::nominal();
        let mut reg = ContextRegistry::build(3, 5).unwrap();
        reg.contexts.remove(0);
        let text = toml::to_string(&RegistryRecord {
            master_seed: 5,
            context: reg
                .contexts
                .iter()
                .map(|s| ContextRecord {
                    spec: s.clone(),
                    factors: s.apply(&nominal).unwrap().1,
                })
                .collect(),
        })
        .unwrap();
        assert!(ContextRegistry::parse(&text).is_err());
    }
}
