//! Plain-text parameter checkpoints.
//!
//! ```text
//! # isac-checkpoint 1
//! # network {"kind":"hcl","config":{...}}
//! # steps 96
//! head.b 96
//! 1.5e-2 -3.25e-1 ...
//! ```
//!
//! Every parameter is a `name dims...` line followed by its values in row-major
//! order, one line per innermost row. Values are written in shortest
//! round-trip form so loading reproduces them bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use isac_core::autodiff::{ParameterSet, Tensor};
use isac_core::baselines::NaiveNetConfig;
use isac_core::hcl::HclConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, SimError, SimResult};

const MAGIC: &str = "# isac-checkpoint 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum NetworkSpec {
    Hcl(HclConfig),
    Naive(NaiveNetConfig),
}

impl NetworkSpec {
    pub fn n_tx(&self) -> usize {
        match self {
            NetworkSpec::Hcl(c) => c.n_tx,
            NetworkSpec::Naive(c) => c.n_tx,
        }
    }

    pub fn k_vehicles(&self) -> usize {
        match self {
            NetworkSpec::Hcl(c) => c.k_vehicles,
            NetworkSpec::Naive(c) => c.k_vehicles,
        }
    }

    pub fn as_network(&self) -> &dyn isac_core::training::Network {
        match self {
            NetworkSpec::Hcl(c) => c,
            NetworkSpec::Naive(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkSpec,
    pub params: ParameterSet,
}

fn bad(msg: impl Into<String>) -> SimError {
    SimError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        let meta = serde_json::to_string(&self.network).expect("network spec serializes");
        let _ = writeln!(out, "# network {meta}");
        let _ = writeln!(out, "# steps {}", self.params.step_count);
        for e in self.params.entries() {
            out.push_str(&e.name);
            for d in e.shape() {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            let row = e.shape().last().copied().unwrap_or(1).max(1);
            for chunk in e.values().chunks(row) {
                let line: Vec<String> = chunk.iter().map(|v| format!("{v:e}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> SimResult<Self> {
        let mut lines = text.lines().enumerate().peekable();
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(bad("missing checkpoint header")),
        }
        let mut network = None;
        let mut steps = 0;
        while let Some((_, l)) = lines.peek() {
            let Some(rest) = l.strip_prefix("# ") else { break };
            if let Some(json) = rest.strip_prefix("network ") {
                network = Some(serde_json::from_str(json).map_err(|e| bad(format!("network metadata: {e}")))?);
            } else if let Some(n) = rest.strip_prefix("steps ") {
                steps = n.trim().parse().map_err(|_| bad(format!("bad step count {n:?}")))?;
            } else {
                return Err(bad(format!("unknown metadata line {l:?}")));
            }
            lines.next();
        }
        let network = network.ok_or_else(|| bad("missing network metadata"))?;
        let mut params = ParameterSet::new();
        while let Some((i, header)) = lines.next() {
            if header.trim().is_empty() {
                continue;
            }
            let mut parts = header.split_whitespace();
            let name = parts.next().expect("non-empty line");
            let shape = parts
                .map(|d| d.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("line {}: bad shape in {header:?}", i + 1)))?;
            let n: usize = shape.iter().product();
            let mut values = Vec::with_capacity(n);
            while values.len() < n {
                let (j, line) = lines
                    .next()
                    .ok_or_else(|| bad(format!("{name}: expected {n} values, got {}", values.len())))?;
                for tok in line.split_whitespace() {
                    values.push(
                        tok.parse::<f64>()
                            .map_err(|_| bad(format!("line {}: bad value {tok:?}", j + 1)))?,
                    );
                }
            }
            if values.len() != n {
                return Err(bad(format!("{name}: expected {n} values, got {}", values.len())));
            }
            params.insert(name, Tensor::new(&shape, values)?)?;
        }
        params.step_count = steps;
        Ok(Self { network, params })
    }

    pub fn save(&self, path: &Path) -> SimResult<()> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> SimResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use isac_core::rng::rng_from_seed;
    use isac_core::training::Network;

    fn sample() -> Checkpoint {
        let mut cfg = HclConfig::new(2, 2, 8);
        cfg.input_scale = 1.0 / 3.0;
        cfg.output_scale = 0.123456789e-7;
        let mut params = cfg.init_params(&mut rng_from_seed(4)).unwrap();
        params.step_count = 17;
        let v = params.values_mut(0);
        v[0] = f64::MIN_POSITIVE;
        v[1] = -0.1 - 0.2;
        v[2] = 1e300;
        Checkpoint {
            network: NetworkSpec::Hcl(cfg),
            params,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_text(&c.to_text()).unwrap();
        assert_eq!(back.network, c.network);
        assert_eq!(back.params.step_count, 17);
        assert_eq!(back.params.len(), c.params.len());
        for (a, b) in back.params.entries().iter().zip(c.params.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape(), b.shape());
            let ab: Vec<u64> = a.values().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn naive_round_trip() {
        let mut cfg = NaiveNetConfig::new(2, 4);
        cfg.hidden = [5, 3];
        let c = Checkpoint {
            params: cfg.init_params(&mut rng_from_seed(1)).unwrap(),
            network: NetworkSpec::Naive(cfg),
        };
        assert_eq!(Checkpoint::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn truncated_or_garbled_files_fail() {
        let text = sample().to_text();
        let cut = &text[..text.len() - 40];
        assert!(Checkpoint::from_text(cut).is_err());
        assert!(Checkpoint::from_text(&text.replacen("# isac", "# nope", 1)).is_err());
        assert!(Checkpoint::from_text(&text.replacen("\"hcl\"", "\"cnn\"", 1)).is_err());
    }
}
