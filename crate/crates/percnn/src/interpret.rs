//! Symbolic extraction of the learned dynamics: because the recurrent block
//! is a product of affine maps followed by a linear aggregation, its residual
//! is an explicit polynomial in the state components (and, for frozen
//! stencil filters, in derivative symbols). This module expands that
//! polynomial exactly, prunes small terms, verifies the algebra against the
//! network, and renders text/CSV reports.

use std::collections::BTreeMap;

use crate::grid::{Field, GridError};
use crate::model::{
    highway_diffusion, pi_block_residual, FilterRole, Highway, ModelConfig, ModelParams,
};
use crate::rng::Xoshiro256;
use crate::tensor::Tensor;

/// An atomic quantity the extracted polynomial is written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Symbol {
    /// A state component (u, v, ...).
    State(usize),
    /// First derivative along axis 0 of a state component.
    Dx(usize),
    /// First derivative along axis 1 of a state component.
    Dy(usize),
    /// Laplacian of a state component.
    Lap(usize),
}

pub fn channel_name(c: usize) -> String {
    match c {
        0 => "u".into(),
        1 => "v".into(),
        2 => "w".into(),
        n => format!("c{n}"),
    }
}

impl std::fmt::Display for Symbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Symbol::State(c) => write!(f, "{}", channel_name(*c)),
            Symbol::Dx(c) => write!(f, "{}_x", channel_name(*c)),
            Symbol::Dy(c) => write!(f, "{}_y", channel_name(*c)),
            Symbol::Lap(c) => write!(f, "lap({})", channel_name(*c)),
        }
    }
}

/// A product of symbol powers; the empty monomial is the constant 1.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Monomial(pub BTreeMap<Symbol, u32>);

impl Monomial {
    pub fn one() -> Self {
        Monomial::default()
    }

    pub fn of(symbol: Symbol) -> Self {
        let mut m = BTreeMap::new();
        m.insert(symbol, 1);
        Monomial(m)
    }

    pub fn degree(&self) -> u32 {
        self.0.values().sum()
    }

    fn merged(&self, other: &Monomial) -> Monomial {
        let mut m = self.0.clone();
        for (&s, &p) in &other.0 {
            *m.entry(s).or_insert(0) += p;
        }
        Monomial(m)
    }

    pub fn evaluate(&self, value_of: &impl Fn(Symbol) -> f64) -> f64 {
        let mut out = 1.0;
        for (&s, &p) in &self.0 {
            out *= value_of(s).powi(p as i32);
        }
        out
    }
}

impl std::fmt::Display for Monomial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        let mut first = true;
        for (s, p) in &self.0 {
            if !first {
                write!(f, "*")?;
            }
            first = false;
            if *p == 1 {
                write!(f, "{s}")?;
            } else {
                write!(f, "{s}^{p}")?;
            }
        }
        Ok(())
    }
}

/// A polynomial over [`Symbol`]s with real coefficients; one per output
/// channel of the learned residual. Normalized: no zero-coefficient terms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolyExpr {
    pub terms: BTreeMap<Monomial, f64>,
}

impl PolyExpr {
    pub fn zero() -> Self {
        PolyExpr::default()
    }

    pub fn constant(c: f64) -> Self {
        let mut e = PolyExpr::zero();
        e.add_term(Monomial::one(), c);
        e
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 && !self.terms.contains_key(&m) {
            return;
        }
        let entry = self.terms.entry(m.clone()).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.terms.remove(&m);
        }
    }

    pub fn scaled(&self, c: f64) -> PolyExpr {
        if c == 0.0 {
            return PolyExpr::zero();
        }
        PolyExpr {
            terms: self.terms.iter().map(|(m, v)| (m.clone(), v * c)).collect(),
        }
    }

    pub fn plus(&self, other: &PolyExpr) -> PolyExpr {
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        out
    }

    pub fn times(&self, other: &PolyExpr) -> PolyExpr {
        let mut out = PolyExpr::zero();
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.add_term(ma.merged(mb), ca * cb);
            }
        }
        out
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn evaluate(&self, value_of: &impl Fn(Symbol) -> f64) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| c * m.evaluate(value_of))
            .sum()
    }
}

fn role_error(detail: String) -> GridError {
    GridError::Spec {
        context: "interpret",
        detail,
    }
}

/// The affine polynomial computed by output channel `ch` of parallel layer
/// `layer`, or an error if that filter has spatial extent without a frozen
/// role (spatially-coupled free filters have no pointwise expansion).
fn layer_channel_poly(
    params: &ModelParams,
    config: &ModelConfig,
    layer: usize,
    ch: usize,
) -> Result<PolyExpr, GridError> {
    let role = config
        .roles
        .as_ref()
        .map_or(FilterRole::Free, |r| r[layer][ch]);
    match role {
        FilterRole::Free => {
            if config.layer_filter_size(layer) != 1 {
                return Err(role_error(format!(
                    "layer {layer} channel {ch} is a free filter of extent {}; only 1x1 free \
                     filters or frozen stencils are interpretable",
                    config.layer_filter_size(layer)
                )));
            }
            let s = config.state_channels;
            let w = params.pi_weights[layer].data();
            let mut e = PolyExpr::zero();
            for input in 0..s {
                e.add_term(Monomial::of(Symbol::State(input)), w[ch * s + input]);
            }
            e.add_term(Monomial::one(), params.pi_biases[layer].data()[ch]);
            Ok(e)
        }
        FilterRole::FixedDx { channel } => {
            let mut e = PolyExpr::zero();
            e.add_term(Monomial::of(Symbol::Dx(channel)), 1.0);
            Ok(e)
        }
        FilterRole::FixedDy { channel } => {
            let mut e = PolyExpr::zero();
            e.add_term(Monomial::of(Symbol::Dy(channel)), 1.0);
            Ok(e)
        }
        FilterRole::FixedLaplacian { channel } => {
            let mut e = PolyExpr::zero();
            e.add_term(Monomial::of(Symbol::Lap(channel)), 1.0);
            Ok(e)
        }
    }
}

fn expand(params: &ModelParams, config: &ModelConfig) -> Result<Vec<PolyExpr>, GridError> {
    config.validate()?;
    if !config.pi_block {
        return Err(role_error("the learned block is disabled; nothing to extract".into()));
    }
    let mut products = Vec::with_capacity(config.n_channels);
    for ch in 0..config.n_channels {
        let mut product = layer_channel_poly(params, config, 0, ch)?;
        for layer in 1..config.n_parallel {
            product = product.times(&layer_channel_poly(params, config, layer, ch)?);
        }
        products.push(product);
    }
    let agg = params.agg_w.data();
    let mut out = Vec::with_capacity(config.state_channels);
    for s in 0..config.state_channels {
        let mut e = PolyExpr::constant(params.agg_b.data()[s]);
        for (ch, product) in products.iter().enumerate() {
            e = e.plus(&product.scaled(agg[s * config.n_channels + ch]));
        }
        if config.highway == Highway::Diffusion {
            let coef = params.diff_coef.as_ref().ok_or(role_error(
                "diffusion highway enabled but no coefficients present".into(),
            ))?;
            e.add_term(Monomial::of(Symbol::Lap(s)), coef.data()[s]);
        }
        out.push(e);
    }
    Ok(out)
}

/// Expand a model whose parallel filters are all 1x1 into one polynomial in
/// the state components per output channel. Exact up to f64 rounding.
pub fn expand_pointwise(
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<PolyExpr>, GridError> {
    for layer in 0..config.n_parallel {
        if config.layer_filter_size(layer) != 1 {
            return Err(role_error(format!(
                "layer {layer} has filter extent {}; use the derivative-aware expansion \
                 for frozen stencil layers",
                config.layer_filter_size(layer)
            )));
        }
    }
    expand(params, config)
}

/// Expand a model mixing 1x1 free filters with frozen derivative stencils;
/// each frozen output is kept as an atomic derivative symbol. Free filters
/// with spatial extent are rejected as uninterpretable.
pub fn expand_with_derivatives(
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<PolyExpr>, GridError> {
    expand(params, config)
}

/// Drop terms with |coefficient| < threshold, preserving the rest bit-exactly.
pub fn prune(expr: &PolyExpr, threshold: f64) -> PolyExpr {
    PolyExpr {
        terms: expr
            .terms
            .iter()
            .filter(|(_, c)| c.abs() >= threshold)
            .map(|(m, &c)| (m.clone(), c))
            .collect(),
    }
}

/// Realized per-cell values for every symbol kind, read off the network's
/// own operators so the comparison isolates the symbolic algebra.
struct SymbolValues {
    state: Vec<Vec<f64>>,
    dx: BTreeMap<usize, Vec<f64>>,
    dy: BTreeMap<usize, Vec<f64>>,
    lap: Vec<Vec<f64>>,
}

impl SymbolValues {
    fn at(&self, cell: usize) -> impl Fn(Symbol) -> f64 + '_ {
        move |s| match s {
            Symbol::State(c) => self.state[c][cell],
            Symbol::Dx(c) => self.dx[&c][cell],
            Symbol::Dy(c) => self.dy[&c][cell],
            Symbol::Lap(c) => self.lap[c][cell],
        }
    }
}

/// Evaluate both the network residual and the extracted polynomials on
/// random states (uniform in [−1, 1] per cell and channel) and return the
/// maximum absolute deviation. Derivative symbols are realized by applying
/// the network's own frozen filters to the random field, so an exact
/// expansion deviates only by floating-point reassociation.
pub fn verify_extraction(
    exprs: &[PolyExpr],
    params: &ModelParams,
    config: &ModelConfig,
    n_samples: usize,
    seed: u64,
) -> Result<f64, GridError> {
    config.validate()?;
    if exprs.len() != config.state_channels {
        return Err(role_error(format!(
            "{} expressions for {} state channels",
            exprs.len(),
            config.state_channels
        )));
    }
    let rank = params.pi_weights[0].shape().len() - 2;
    let side = match rank {
        1 => n_samples.max(5),
        2 => ((n_samples as f64).sqrt().ceil() as usize).max(5),
        _ => ((n_samples as f64).cbrt().ceil() as usize).max(5),
    };
    let extents = vec![side; rank];
    let spacing = vec![1.0; rank];
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let state = Field::from_fn(config.state_channels, &extents, &spacing, |_, _| {
        rng.uniform_in(-1.0, 1.0)
    });
    let cells = state.cells();

    let net = pi_block_residual(&state, params, config)?;

    let per_channel = |f: &Field| -> Vec<Vec<f64>> {
        (0..f.channels())
            .map(|c| f.data()[c * cells..(c + 1) * cells].to_vec())
            .collect()
    };
    let mut values = SymbolValues {
        state: per_channel(&state),
        dx: BTreeMap::new(),
        dy: BTreeMap::new(),
        lap: Vec::new(),
    };
    let needs_lap = exprs
        .iter()
        .flat_map(|e| e.terms.keys())
        .any(|m| m.0.keys().any(|s| matches!(s, Symbol::Lap(_))));
    if needs_lap {
        let ones = Tensor::full(&[config.state_channels], 1.0);
        values.lap = per_channel(&highway_diffusion(&state, &ones, &config.bc)?);
    }
    if let Some(roles) = &config.roles {
        for (layer, layer_roles) in roles.iter().enumerate() {
            if layer_roles.iter().all(|r| matches!(r, FilterRole::Free)) {
                continue;
            }
            let out = state.conv(
                &params.pi_weights[layer],
                params.pi_biases[layer].data(),
                &config.bc,
            )?;
            let outs = per_channel(&out);
            for (ch, role) in layer_roles.iter().enumerate() {
                match role {
                    FilterRole::Free => {}
                    FilterRole::FixedDx { channel } => {
                        values.dx.entry(*channel).or_insert_with(|| outs[ch].clone());
                    }
                    FilterRole::FixedDy { channel } => {
                        values.dy.entry(*channel).or_insert_with(|| outs[ch].clone());
                    }
                    FilterRole::FixedLaplacian { channel } => {
                        if values.lap.is_empty() {
                            values.lap = vec![Vec::new(); config.state_channels];
                        }
                        if values.lap[*channel].is_empty() {
                            values.lap[*channel] = outs[ch].clone();
                        }
                    }
                }
            }
        }
    }

    let mut max_dev = 0.0f64;
    for (s, expr) in exprs.iter().enumerate() {
        for cell in 0..cells {
            let symbolic = expr.evaluate(&values.at(cell));
            let dev = (net.data()[s * cells + cell] - symbolic).abs();
            max_dev = max_dev.max(dev);
        }
    }
    Ok(max_dev)
}

/// Format with 4 significant digits in plain decimal.
fn sig4(x: f64) -> String {
    if x == 0.0 {
        return "0.000".into();
    }
    let decimals = (3 - x.abs().log10().floor() as i64).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Human-readable report: one line per channel, terms sorted by decreasing
/// coefficient magnitude.
pub fn equation_report(exprs: &[PolyExpr]) -> String {
    let mut out = String::new();
    for (c, expr) in exprs.iter().enumerate() {
        out.push_str(&format!("d{}/dt =", channel_name(c)));
        if expr.terms.is_empty() {
            out.push_str(" 0");
        } else {
            let mut terms: Vec<(&Monomial, f64)> =
                expr.terms.iter().map(|(m, &v)| (m, v)).collect();
            terms.sort_by(|a, b| {
                b.1.abs()
                    .partial_cmp(&a.1.abs())
                    .unwrap()
                    .then_with(|| a.0.cmp(b.0))
            });
            for (i, (m, v)) in terms.iter().enumerate() {
                if *v < 0.0 {
                    out.push_str(" - ");
                } else if i == 0 {
                    out.push(' ');
                } else {
                    out.push_str(" + ");
                }
                out.push_str(&sig4(v.abs()));
                if !m.0.is_empty() {
                    out.push_str(&format!("*{m}"));
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Machine-readable export: `channel,monomial,coefficient` rows.
pub fn write_terms_csv<W: std::io::Write>(
    exprs: &[PolyExpr],
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(w, "channel,monomial,coefficient")?;
    for (c, expr) in exprs.iter().enumerate() {
        for (m, v) in &expr.terms {
            writeln!(w, "{},{},{}", channel_name(c), m, v)?;
        }
    }
    Ok(())
}
