//! TOML experiment configuration. Every key is optional and overrides the
//! defaults of the chosen experiment.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use gapwave::model::SynapseModel;
use gapwave::network::SpikeConnection;
use gapwave::rk::ButcherTableau;
use serde::Deserialize;

use crate::experiments::{ExperimentSpec, Variant};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub neuron: NeuronSection,
    pub network: NetworkSection,
    pub solver: SolverSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronSection {
    pub c_m: Option<f64>,
    pub g_na: Option<f64>,
    pub g_kv1: Option<f64>,
    pub g_kv3: Option<f64>,
    pub g_l: Option<f64>,
    pub e_na: Option<f64>,
    pub e_k: Option<f64>,
    pub e_l: Option<f64>,
    pub theta: Option<f64>,
    pub v_spike: Option<f64>,
    pub i_ext: Option<f64>,
    /// `pulse` or `exponential`.
    pub synapse: Option<String>,
    pub synapse_tau: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub neurons: Option<usize>,
    pub degree: Option<usize>,
    pub total_g: Option<f64>,
    pub record: Option<Vec<usize>>,
    pub connections: Vec<ConnectionSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionSection {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
    pub delay: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tableau: Option<String>,
    pub rk_tolerance: Option<f64>,
    pub reference_tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub template_resolution: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub h: Option<Vec<f64>>,
    pub schemes: Option<Vec<String>>,
    pub wfr_tol: Option<Vec<f64>>,
    pub window: Option<f64>,
    pub duration: Option<f64>,
    pub workers: Option<Vec<usize>>,
    pub repetitions: Option<usize>,
    pub traces: Option<bool>,
}

fn set<T: Clone>(target: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *target = v.clone();
    }
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn apply(&self, spec: &mut ExperimentSpec) -> Result<()> {
        let n = &self.neuron;
        let p = &mut spec.params;
        set(&mut p.c_m, &n.c_m);
        set(&mut p.g_na, &n.g_na);
        set(&mut p.g_kv1, &n.g_kv1);
        set(&mut p.g_kv3, &n.g_kv3);
        set(&mut p.g_l, &n.g_l);
        set(&mut p.e_na, &n.e_na);
        set(&mut p.e_k, &n.e_k);
        set(&mut p.e_l, &n.e_l);
        set(&mut p.theta, &n.theta);
        set(&mut p.v_spike, &n.v_spike);
        set(&mut p.i_ext, &n.i_ext);
        if let Some(name) = &n.synapse {
            p.synapse = parse_synapse(name, n.synapse_tau)?;
        } else if n.synapse_tau.is_some() {
            bail!("synapse_tau given without synapse");
        }

        let net = &self.network;
        set(&mut spec.network.neurons, &net.neurons);
        set(&mut spec.network.degree, &net.degree);
        set(&mut spec.network.total_g, &net.total_g);
        if net.record.is_some() {
            spec.network.record = net.record.clone();
        }
        spec.network.connections.extend(net.connections.iter().map(|c| SpikeConnection {
            source: c.source,
            target: c.target,
            weight: c.weight,
            delay: c.delay,
        }));

        let s = &self.solver;
        if let Some(name) = &s.tableau {
            spec.tableau = ButcherTableau::by_name(name).ok_or_else(|| anyhow!("unknown tableau '{name}'"))?;
        }
        set(&mut spec.rk_tolerance, &s.rk_tolerance);
        set(&mut spec.reference_tolerance, &s.reference_tolerance);
        set(&mut spec.max_iterations, &s.max_iterations);
        set(&mut spec.template_resolution, &s.template_resolution);

        let e = &self.experiment;
        set(&mut spec.h, &e.h);
        if let Some(schemes) = &e.schemes {
            spec.variants = schemes.iter().map(|s| Variant::parse(s)).collect::<Result<_>>()?;
        }
        set(&mut spec.wfr_tol, &e.wfr_tol);
        set(&mut spec.window, &e.window);
        set(&mut spec.duration, &e.duration);
        set(&mut spec.workers, &e.workers);
        set(&mut spec.repetitions, &e.repetitions);
        set(&mut spec.traces, &e.traces);
        Ok(())
    }
}

pub fn parse_synapse(name: &str, tau: Option<f64>) -> Result<SynapseModel<f64>> {
    match (name, tau) {
        ("pulse", None) => Ok(SynapseModel::Pulse),
        ("pulse", Some(_)) => bail!("pulse synapse takes no time constant"),
        ("exponential", Some(tau)) => Ok(SynapseModel::Exponential { tau }),
        ("exponential", None) => bail!("exponential synapse needs synapse_tau"),
        _ => bail!("unknown synapse '{name}'"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::ExperimentKind;

    #[test]
    fn shipped_example_parses_and_applies() {
        let text = include_str!("../../../docs/example.toml");
        let cfg = FileConfig::parse(text).unwrap();
        let mut spec = ExperimentSpec::defaults(ExperimentKind::Accuracy);
        cfg.apply(&mut spec).unwrap();
        spec.validate().unwrap();
    }

    #[test]
    fn keys_override_defaults() {
        let cfg = FileConfig::parse(
            r#"
            [neuron]
            i_ext = 350.0
            synapse = "exponential"
            synapse_tau = 2.0

            [network]
            neurons = 4
            degree = 2

            [[network.connections]]
            source = 0
            target = 3
            weight = 50.0
            delay = 1.0

            [experiment]
            h = [0.05]
            schemes = ["gauss_seidel_h", "non_iterative_constant"]
            "#,
        )
        .unwrap();
        let mut spec = ExperimentSpec::defaults(ExperimentKind::Accuracy);
        cfg.apply(&mut spec).unwrap();
        assert_eq!(spec.params.i_ext, 350.0);
        assert_eq!(spec.params.synapse, SynapseModel::Exponential { tau: 2.0 });
        assert_eq!(spec.network.neurons, 4);
        assert_eq!(spec.network.connections.len(), 1);
        assert_eq!(spec.h, vec![0.05]);
        assert_eq!(spec.variants[0], Variant::parse("gauss_seidel_h").unwrap());
        // untouched keys keep the experiment defaults
        assert_eq!(spec.wfr_tol, vec![1e-6, 1e-10]);
    }

    #[test]
    fn unknown_keys_and_names_are_rejected() {
        assert!(FileConfig::parse("[neuron]\ncm = 1.0").is_err());
        let mut spec = ExperimentSpec::defaults(ExperimentKind::Accuracy);
        let cfg = FileConfig::parse("[experiment]\nschemes = [\"runge\"]").unwrap();
        assert!(cfg.apply(&mut spec).is_err());
        let cfg = FileConfig::parse("[solver]\ntableau = \"euler\"").unwrap();
        assert!(cfg.apply(&mut spec).is_err());
    }
}
