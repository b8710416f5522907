//! Experiment configuration files.
//!
//! Line-oriented key/value text; `#` starts a comment. One `class` line per
//! class, in order:
//!
//! ```text
//! class a=1.0 R=5 count=5
//! class a=1.0 R=20 count=5
//! alpha 0.5            # or: M 5   (exactly one of the two)
//! horizon 200000
//! warmup 20000         # default: horizon / 10
//! replications 20      # default: 20
//! seed 20260808        # default: 0
//! policies wi,md       # default: wi,md
//! beta 0.9             # optional; switches the index policy to its
//!                      # discounted form
//! out results          # default: current directory
//! ```
//!
//! Parsing validates everything and reports the full list of violations, not
//! just the first.

use std::path::{Path, PathBuf};
use whittle_sched::model::{ClassParams, SystemConfig};
use whittle_sched::policies::PolicyKind;

#[derive(Debug, Clone)]
pub struct ClassSpec {
    pub holding_cost: f64,
    pub rate: u64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServerSpec {
    Count(usize),
    Ratio(f64),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub classes: Vec<ClassSpec>,
    pub servers: ServerSpec,
    pub horizon: u64,
    pub warmup: u64,
    pub replications: usize,
    pub seed: u64,
    pub policies: Vec<PolicyKind>,
    pub beta: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Vec<String>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Vec<String>> {
        let mut errors = Vec::new();
        let mut classes = Vec::new();
        let mut servers: Option<ServerSpec> = None;
        let mut horizon: Option<u64> = None;
        let mut warmup: Option<u64> = None;
        let mut replications: Option<usize> = None;
        let mut seed: Option<u64> = None;
        let mut policies: Option<Vec<PolicyKind>> = None;
        let mut beta: Option<f64> = None;
        let mut out_dir: Option<PathBuf> = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = lineno + 1;
            let mut tokens = line.split_whitespace();
            let key = tokens.next().unwrap();
            let rest: Vec<&str> = tokens.collect();
            match key {
                "class" => match parse_class(&rest) {
                    Ok(spec) => classes.push(spec),
                    Err(e) => errors.push(format!("line {lineno}: {e}")),
                },
                "M" | "alpha" => {
                    let parsed = if key == "M" {
                        parse_one(&rest).map(ServerSpec::Count)
                    } else {
                        parse_one(&rest).map(ServerSpec::Ratio)
                    };
                    match parsed {
                        Ok(v) if servers.is_none() => servers = Some(v),
                        Ok(_) => errors.push(format!(
                            "line {lineno}: server budget already set; exactly one of `M` or \
                             `alpha` is allowed"
                        )),
                        Err(e) => errors.push(format!("line {lineno}: {key}: {e}")),
                    }
                }
                "horizon" => set_once(&mut errors, lineno, "horizon", &mut horizon, parse_one(&rest)),
                "warmup" => set_once(&mut errors, lineno, "warmup", &mut warmup, parse_one(&rest)),
                "replications" => {
                    set_once(&mut errors, lineno, "replications", &mut replications, parse_one(&rest))
                }
                "seed" => set_once(&mut errors, lineno, "seed", &mut seed, parse_one(&rest)),
                "beta" => set_once(&mut errors, lineno, "beta", &mut beta, parse_one(&rest)),
                "policies" => {
                    let parsed = parse_policies(&rest);
                    match parsed {
                        Ok(list) => set_once(&mut errors, lineno, "policies", &mut policies, Ok(list)),
                        Err(e) => errors.push(format!("line {lineno}: {e}")),
                    }
                }
                "out" => {
                    if rest.len() == 1 {
                        out_dir = Some(PathBuf::from(rest[0]));
                    } else {
                        errors.push(format!("line {lineno}: out takes exactly one path"));
                    }
                }
                other => errors.push(format!("line {lineno}: unknown key `{other}`")),
            }
        }

        if classes.is_empty() {
            errors.push("no `class` lines found; at least one class is required".into());
        }
        for (k, spec) in classes.iter().enumerate() {
            if spec.rate < 2 {
                errors.push(format!(
                    "class {k}: R = {} violates the requirement R >= 2 (arrivals are uniform \
                     on 0..R-1, which needs at least two values)",
                    spec.rate
                ));
            }
            if !(spec.holding_cost > 0.0) {
                errors.push(format!("class {k}: a = {} must be positive", spec.holding_cost));
            }
            if spec.count == 0 {
                errors.push(format!("class {k}: count must be at least 1"));
            }
        }
        let total: usize = classes.iter().map(|c| c.count).sum();
        match &servers {
            None => errors.push("exactly one of `M` or `alpha` is required; found neither".into()),
            Some(ServerSpec::Ratio(alpha)) => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    errors.push(format!("alpha = {alpha} must lie strictly inside (0, 1)"));
                }
            }
            Some(ServerSpec::Count(m)) => {
                if *m == 0 || (total > 0 && *m >= total) {
                    errors.push(format!("M = {m} must satisfy 0 < M < N = {total}"));
                }
            }
        }
        let horizon = horizon.unwrap_or_else(|| {
            errors.push("`horizon` is required".into());
            0
        });
        let warmup = warmup.unwrap_or(horizon / 10);
        if horizon > 0 && warmup >= horizon {
            errors.push(format!("warmup ({warmup}) must be below horizon ({horizon})"));
        }
        let replications = replications.unwrap_or(20);
        if replications == 0 {
            errors.push("replications must be at least 1".into());
        }
        if let Some(b) = beta {
            if !(0.0 < b && b < 1.0) {
                errors.push(format!("beta = {b} must lie strictly inside (0, 1)"));
            }
        }

        if !errors.is_empty() {
            return Err(errors);
        }
        Ok(ExperimentConfig {
            classes,
            servers: servers.unwrap(),
            horizon,
            warmup,
            replications,
            seed: seed.unwrap_or(0),
            policies: policies
                .unwrap_or_else(|| vec![PolicyKind::WhittleIndex, PolicyKind::MaxWeightMyopic]),
            beta,
            out_dir,
        })
    }

    pub fn total_queues(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }

    /// Resolves the server count. Returns a note when a fractional
    /// `alpha · N` was floored.
    pub fn resolve_servers(&self) -> (usize, Option<String>) {
        match &self.servers {
            ServerSpec::Count(m) => (*m, None),
            ServerSpec::Ratio(alpha) => {
                let n = self.total_queues();
                let exact = alpha * n as f64;
                let m = exact.floor() as usize;
                let note = if (exact - m as f64).abs() > 1e-12 {
                    Some(format!(
                        "alpha·N = {exact} is fractional; using M = {m} (floor)"
                    ))
                } else {
                    None
                };
                (m, note)
            }
        }
    }

    /// Builds the system configuration, applying an optional seed override.
    pub fn to_system_config(&self, seed_override: Option<u64>) -> Result<SystemConfig, String> {
        let (servers, _) = self.resolve_servers();
        let specs: Result<Vec<(ClassParams, usize)>, _> = self
            .classes
            .iter()
            .enumerate()
            .map(|(k, c)| ClassParams::new(k, c.holding_cost, c.rate).map(|p| (p, c.count)))
            .collect();
        let specs = specs.map_err(|e| e.to_string())?;
        SystemConfig::new(
            specs,
            servers,
            self.horizon,
            self.warmup,
            seed_override.unwrap_or(self.seed),
            self.replications,
        )
        .map_err(|e| e.to_string())
    }
}

fn parse_class(tokens: &[&str]) -> Result<ClassSpec, String> {
    let mut a: Option<f64> = None;
    let mut rate: Option<u64> = None;
    let mut count: Option<usize> = None;
    for token in tokens {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{token}`"))?;
        match key {
            "a" => a = Some(value.parse().map_err(|_| format!("bad a `{value}`"))?),
            "R" => rate = Some(value.parse().map_err(|_| format!("bad R `{value}`"))?),
            "count" => count = Some(value.parse().map_err(|_| format!("bad count `{value}`"))?),
            other => return Err(format!("unknown class field `{other}`")),
        }
    }
    Ok(ClassSpec {
        holding_cost: a.ok_or("class needs a=<weight>")?,
        rate: rate.ok_or("class needs R=<rate>")?,
        count: count.ok_or("class needs count=<queues>")?,
    })
}

fn parse_one<T: std::str::FromStr>(tokens: &[&str]) -> Result<T, String> {
    if tokens.len() != 1 {
        return Err(format!("expected exactly one value, got {}", tokens.len()));
    }
    tokens[0]
        .parse()
        .map_err(|_| format!("cannot parse `{}`", tokens[0]))
}

fn parse_policies(tokens: &[&str]) -> Result<Vec<PolicyKind>, String> {
    if tokens.len() != 1 {
        return Err("policies takes one comma-separated list".into());
    }
    tokens[0]
        .split(',')
        .map(|name| {
            PolicyKind::parse(name.trim())
                .ok_or_else(|| format!("unknown policy `{name}` (expected wi, md, md-rate, rand)"))
        })
        .collect()
}

fn set_once<T>(
    errors: &mut Vec<String>,
    lineno: usize,
    key: &str,
    slot: &mut Option<T>,
    value: Result<T, String>,
) {
    match value {
        Ok(v) => {
            if slot.is_some() {
                errors.push(format!("line {lineno}: duplicate `{key}`"));
            } else {
                *slot = Some(v);
            }
        }
        Err(e) => errors.push(format!("line {lineno}: {key}: {e}")),
    }
}
