//! Prediction quality over time: the accumulative root-mean-square error up
//! to each step (all snapshots before t_k pooled together) and exportable
//! error-propagation curves split into training and extrapolation windows.

use crate::grid::{GridError, Trajectory};

/// Which window a curve point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Extrapolation,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Extrapolation => "extrapolation",
        }
    }
}

/// Accumulative RMSE at every step of a prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    /// Physical time of each step k = 1, 2, ...
    pub times: Vec<f64>,
    pub rmse: Vec<f64>,
    pub phases: Vec<Phase>,
}

fn check_comparable(pred: &Trajectory, reference: &Trajectory) -> Result<(), GridError> {
    if pred.len() != reference.len() {
        return Err(GridError::Shape {
            context: "accumulative_rmse",
            detail: format!(
                "prediction has {} snapshots, reference {}",
                pred.len(),
                reference.len()
            ),
        });
    }
    if pred.is_empty() {
        return Err(GridError::Spec {
            context: "accumulative_rmse",
            detail: "empty trajectories".into(),
        });
    }
    let (a, b) = (&pred.fields[0], &reference.fields[0]);
    if !a.same_shape(b) {
        return Err(GridError::Shape {
            context: "accumulative_rmse",
            detail: format!(
                "prediction fields are {}x{:?}, reference {}x{:?}",
                a.channels(),
                a.extents(),
                b.channels(),
                b.extents()
            ),
        });
    }
    let dt_tol = 1e-9 * pred.dt.abs().max(1.0);
    if (pred.dt - reference.dt).abs() > dt_tol || (pred.t0 - reference.t0).abs() > dt_tol {
        return Err(GridError::Spec {
            context: "accumulative_rmse",
            detail: format!(
                "time axes differ: dt {} vs {}, t0 {} vs {}",
                pred.dt, reference.dt, pred.t0, reference.t0
            ),
        });
    }
    Ok(())
}

/// Pooled error of all snapshots before step k (the initial state, index 0,
/// is excluded): sqrt( (1/(n·k)) · Σ_{i=1..k} ‖pred_i − ref_i‖² ) with n the
/// number of scalar entries per snapshot (channels × cells).
pub fn accumulative_rmse(
    pred: &Trajectory,
    reference: &Trajectory,
    k: usize,
) -> Result<f64, GridError> {
    check_comparable(pred, reference)?;
    if k < 1 || k >= pred.len() {
        return Err(GridError::Spec {
            context: "accumulative_rmse",
            detail: format!("k must lie in 1..{}, got {k}", pred.len()),
        });
    }
    let n = pred.fields[0].data().len();
    let mut total = 0.0;
    for i in 1..=k {
        let (p, r) = (pred.fields[i].data(), reference.fields[i].data());
        total += p
            .iter()
            .zip(r)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok((total / (n * k) as f64).sqrt())
}

/// Accumulative RMSE at every step, tagged `train` for k ≤ `train_end_index`
/// and `extrapolation` beyond it. Computed incrementally from the running
/// sum of squared errors, which equals the direct per-k evaluation.
pub fn error_curve(
    pred: &Trajectory,
    reference: &Trajectory,
    train_end_index: usize,
) -> Result<ErrorCurve, GridError> {
    check_comparable(pred, reference)?;
    if pred.len() < 2 {
        return Err(GridError::Spec {
            context: "error_curve",
            detail: "need at least one step after the initial state".into(),
        });
    }
    let n = pred.fields[0].data().len();
    let steps = pred.len() - 1;
    let mut times = Vec::with_capacity(steps);
    let mut rmse = Vec::with_capacity(steps);
    let mut phases = Vec::with_capacity(steps);
    let mut total = 0.0;
    for k in 1..=steps {
        let (p, r) = (pred.fields[k].data(), reference.fields[k].data());
        total += p
            .iter()
            .zip(r)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        times.push(pred.time_at(k));
        rmse.push((total / (n * k) as f64).sqrt());
        phases.push(if k <= train_end_index {
            Phase::Train
        } else {
            Phase::Extrapolation
        });
    }
    Ok(ErrorCurve {
        times,
        rmse,
        phases,
    })
}

impl ErrorCurve {
    pub fn len(&self) -> usize {
        self.rmse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rmse.is_empty()
    }

    /// Export as `k,t,rmse,phase` rows.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "k,t,rmse,phase")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{}",
                i + 1,
                self.times[i],
                self.rmse[i],
                self.phases[i].as_str()
            )?;
        }
        Ok(())
    }

    /// A self-contained SVG line chart of the curve: axes with ticks, the
    /// training window drawn solid and the extrapolation window dashed, and
    /// a legend.
    pub fn write_svg<W: std::io::Write>(&self, w: &mut W, title: &str) -> std::io::Result<()> {
        let (width, height) = (720.0, 440.0);
        let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
        let plot_w = width - left - right;
        let plot_h = height - top - bottom;
        let t_min = self.times.first().copied().unwrap_or(0.0);
        let t_max = self.times.last().copied().unwrap_or(1.0);
        let t_span = (t_max - t_min).max(1e-300);
        let r_max = self.rmse.iter().cloned().fold(0.0, f64::max).max(1e-300);
        let x = |t: f64| left + (t - t_min) / t_span * plot_w;
        let y = |r: f64| top + (1.0 - r / (r_max * 1.05)) * plot_h;

        writeln!(
            w,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">"
        )?;
        writeln!(w, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>")?;
        writeln!(
            w,
            "<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{title}</text>",
            left + plot_w / 2.0
        )?;
        // axes
        writeln!(
            w,
            "<line x1=\"{left}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
            top + plot_h,
            left + plot_w,
            top + plot_h
        )?;
        writeln!(
            w,
            "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{:.1}\" stroke=\"black\"/>",
            top + plot_h
        )?;
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (tx, ty) = (x(t_min + f * t_span), top + plot_h);
            writeln!(
                w,
                "<line x1=\"{tx:.1}\" y1=\"{ty:.1}\" x2=\"{tx:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
                ty + 4.0
            )?;
            writeln!(
                w,
                "<text x=\"{tx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.3}</text>",
                ty + 18.0,
                t_min + f * t_span
            )?;
            let ry = y(f * r_max);
            writeln!(
                w,
                "<line x1=\"{:.1}\" y1=\"{ry:.1}\" x2=\"{left}\" y2=\"{ry:.1}\" stroke=\"black\"/>",
                left - 4.0
            )?;
            writeln!(
                w,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.4}</text>",
                left - 8.0,
                ry + 4.0,
                f * r_max
            )?;
        }
        writeln!(
            w,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">time</text>",
            left + plot_w / 2.0,
            height - 12.0
        )?;
        writeln!(
            w,
            "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">accumulative RMSE</text>",
            top + plot_h / 2.0,
            top + plot_h / 2.0
        )?;
        // one polyline per phase
        for (phase, dash) in [(Phase::Train, "none"), (Phase::Extrapolation, "6 4")] {
            let pts: Vec<String> = (0..self.len())
                .filter(|&i| self.phases[i] == phase)
                .map(|i| format!("{:.2},{:.2}", x(self.times[i]), y(self.rmse[i])))
                .collect();
            if pts.is_empty() {
                continue;
            }
            writeln!(
                w,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.8\" stroke-dasharray=\"{dash}\"/>",
                pts.join(" ")
            )?;
        }
        // legend
        writeln!(
            w,
            "<line x1=\"{:.1}\" y1=\"{top}\" x2=\"{:.1}\" y2=\"{top}\" stroke=\"#1f77b4\" stroke-width=\"1.8\"/><text x=\"{:.1}\" y=\"{:.1}\">training</text>",
            left + plot_w - 180.0,
            left + plot_w - 150.0,
            left + plot_w - 144.0,
            top + 4.0
        )?;
        writeln!(
            w,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#1f77b4\" stroke-width=\"1.8\" stroke-dasharray=\"6 4\"/><text x=\"{:.1}\" y=\"{:.1}\">extrapolation</text>",
            left + plot_w - 180.0,
            top + 18.0,
            left + plot_w - 150.0,
            top + 18.0,
            left + plot_w - 144.0,
            top + 22.0
        )?;
        writeln!(w, "</svg>")
    }
}
