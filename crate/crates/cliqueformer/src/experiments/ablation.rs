//! Ablation variants of the main method: drop the bottleneck term, drop
//! the design-time weight decay, or sweep the clique count.

use crate::error::{Error, Result};
use crate::experiments::bench::{run_benchmark, BenchResult, RunConfig};
use crate::fgm::CliqueLayout;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationVariant {
    Base,
    /// Bottleneck coefficient pinned to 0 throughout training.
    NoVib,
    /// Design optimizer runs without weight decay; training unchanged.
    NoWeightDecay,
    /// Vary the clique count while keeping d_z fixed (d_clique adapts;
    /// only counts dividing d_z - d_knot exactly are representable).
    NCliqueFixedDz(usize),
    /// Vary the clique count with d_clique fixed (d_z changes).
    NCliqueFixedDClique(usize),
}

impl AblationVariant {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("ncliques-fixed-dz=") {
            let n = rest
                .parse()
                .map_err(|_| Error::Config(format!("bad clique count '{rest}'")))?;
            return Ok(AblationVariant::NCliqueFixedDz(n));
        }
        if let Some(rest) = s.strip_prefix("ncliques-fixed-dclique=") {
            let n = rest
                .parse()
                .map_err(|_| Error::Config(format!("bad clique count '{rest}'")))?;
            return Ok(AblationVariant::NCliqueFixedDClique(n));
        }
        match s {
            "base" => Ok(AblationVariant::Base),
            "no-vib" => Ok(AblationVariant::NoVib),
            "no-weight-decay" => Ok(AblationVariant::NoWeightDecay),
            other => Err(Error::Config(format!("unknown ablation variant '{other}'"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            AblationVariant::Base => "base".into(),
            AblationVariant::NoVib => "no-vib".into(),
            AblationVariant::NoWeightDecay => "no-weight-decay".into(),
            AblationVariant::NCliqueFixedDz(n) => format!("ncliques-fixed-dz={n}"),
            AblationVariant::NCliqueFixedDClique(n) => format!("ncliques-fixed-dclique={n}"),
        }
    }

    /// Derive the variant's run configuration from a base configuration.
    pub fn apply(&self, base: &RunConfig) -> Result<RunConfig> {
        let mut cfg = base.clone();
        match self {
            AblationVariant::Base => {}
            AblationVariant::NoVib => {
                cfg.train.vib_max_coeff = 0.0;
            }
            AblationVariant::NoWeightDecay => {
                cfg.design.weight_decay = 0.0;
            }
            AblationVariant::NCliqueFixedDz(n) => {
                let layout = &base.model.layout;
                let d_z = layout.latent_dim();
                let d_knot = layout.d_knot();
                let span = d_z - d_knot;
                if *n == 0 || span % n != 0 {
                    return Err(Error::Config(format!(
                        "cannot split d_z = {d_z} into {n} cliques with knot {d_knot}"
                    )));
                }
                let d_clique = d_knot + span / n;
                cfg.model.layout = CliqueLayout::chain(*n, d_clique, d_knot)?;
            }
            AblationVariant::NCliqueFixedDClique(n) => {
                let layout = &base.model.layout;
                cfg.model.layout =
                    CliqueLayout::chain(*n, layout.d_clique(), layout.d_knot())?;
            }
        }
        Ok(cfg)
    }
}

/// Run every variant through the benchmark harness.
pub fn ablation_suite(
    base: &RunConfig,
    variants: &[AblationVariant],
) -> Result<Vec<(String, BenchResult)>> {
    let mut out = Vec::with_capacity(variants.len());
    for v in variants {
        let cfg = v.apply(base)?;
        let result = run_benchmark(&cfg)?;
        out.push((v.label(), result));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::bench::{default_run_config, MethodSpec, TaskSpec};

    fn base() -> RunConfig {
        default_run_config(TaskSpec::parse("rbf11", None).unwrap(), MethodSpec::Cliqueformer)
            .unwrap()
    }

    #[test]
    fn parsing_and_labels_round_trip() {
        for v in [
            AblationVariant::Base,
            AblationVariant::NoVib,
            AblationVariant::NoWeightDecay,
            AblationVariant::NCliqueFixedDz(4),
            AblationVariant::NCliqueFixedDClique(7),
        ] {
            assert_eq!(AblationVariant::parse(&v.label()).unwrap(), v);
        }
        assert!(AblationVariant::parse("bogus").is_err());
    }

    #[test]
    fn no_vib_zeroes_the_coefficient_only() {
        let cfg = AblationVariant::NoVib.apply(&base()).unwrap();
        assert_eq!(cfg.train.vib_max_coeff, 0.0);
        assert_eq!(cfg.design.weight_decay, base().design.weight_decay);
    }

    #[test]
    fn no_weight_decay_touches_design_only() {
        let cfg = AblationVariant::NoWeightDecay.apply(&base()).unwrap();
        assert_eq!(cfg.design.weight_decay, 0.0);
        assert_eq!(cfg.train.weight_decay, base().train.weight_decay);
        assert_eq!(cfg.train.vib_max_coeff, 1.0);
    }

    #[test]
    fn fixed_dz_sweep_preserves_latent_dim() {
        let b = base();
        let d_z = b.model.layout.latent_dim();
        // d_z = 21, knot 1, span 20: valid counts divide 20
        for n in [1usize, 2, 4, 5, 10, 20] {
            let cfg = AblationVariant::NCliqueFixedDz(n).apply(&b).unwrap();
            assert_eq!(cfg.model.layout.latent_dim(), d_z, "n = {n}");
            assert_eq!(cfg.model.layout.n_clique(), n);
        }
        assert!(AblationVariant::NCliqueFixedDz(3).apply(&b).is_err());
    }

    #[test]
    fn fixed_dclique_sweep_changes_latent_dim() {
        let b = base();
        let cfg = AblationVariant::NCliqueFixedDClique(14).apply(&b).unwrap();
        assert_eq!(cfg.model.layout.d_clique(), 3);
        assert_eq!(cfg.model.layout.latent_dim(), 1 + 14 * 2);
    }
}
