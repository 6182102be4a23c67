use std::collections::BTreeMap;

use super::{Gradients, Graph, GraphError, NodeId, Tensor};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Denominator floor: relative error is `|a − n| / max(|a|, |n|, floor)`.
    /// Each probe raises it to `resolution / tolerance`, where `resolution =
    /// ROUNDING_ULPS·ε·max(|f₊|, |f₋|) / (2·step)` is the rounding noise of the
    /// difference quotient.
    pub floor: f64,
    /// Coordinates probed per tensor (evenly strided); `None` probes all.
    pub max_coords: Option<usize>,
    /// Also probe named inputs.
    pub check_inputs: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_coords: Some(16),
            check_inputs: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    /// Probes whose stencil crossed a ReLU or `minimum` kink; excluded from
    /// `max_rel_err`.
    pub kinks_skipped: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub entries: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn coords_checked(&self) -> usize {
        self.entries.iter().map(|e| e.coords_checked).sum()
    }

    pub fn kinks_skipped(&self) -> usize {
        self.entries.iter().map(|e| e.kinks_skipped).sum()
    }
}

fn scalar_out<T: Real>(
    g: &mut Graph<T>,
    feeds: &BTreeMap<String, Tensor<T>>,
    out: NodeId,
) -> Result<(f64, Vec<bool>), GraphError> {
    g.forward(feeds)?;
    Ok((g.value(out)?.item().as_f64(), g.kink_pattern()?))
}

fn coords(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => (0..m).map(|k| k * len / m).collect(),
        _ => (0..len).collect(),
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Assumed evaluation error of a loss, in units of its own last place.
pub const ROUNDING_ULPS: f64 = 16.0;

fn probe_floor(fp: f64, fm: f64, opts: &GradCheckOptions) -> f64 {
    let resolution = ROUNDING_ULPS * f64::EPSILON * fp.abs().max(fm.abs()) / (2.0 * opts.step);
    opts.floor.max(resolution / opts.tolerance)
}

/// Compare analytic gradients of the scalar `output` against central
/// differences for every parameter (and optionally every input).
///
/// A probe whose `±step` evaluations land on different sides of a ReLU or
/// `minimum` kink measures no derivative and is counted in `kinks_skipped`
/// instead. Stop-gradient nodes keep their centre values during probing.
///
/// Parameter values are restored afterwards; the graph is left evaluated at
/// the original point.
pub fn grad_check<T: Real>(
    graph: &mut Graph<T>,
    feeds: &BTreeMap<String, Tensor<T>>,
    output: NodeId,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, GraphError> {
    graph.forward(feeds)?;
    let analytic = graph.backward(output, &Tensor::matrix(1, 1, vec![T::one()]))?;
    let centre = graph.kink_pattern()?;
    graph.pin_stop_gradients()?;
    let probed = probe(graph, feeds, output, opts, &analytic, &centre);
    graph.unpin_stop_gradients();
    graph.forward(feeds)?;
    let entries = probed?;
    let max_rel_err = entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_err,
        entries,
    })
}

fn probe<T: Real>(
    graph: &mut Graph<T>,
    feeds: &BTreeMap<String, Tensor<T>>,
    output: NodeId,
    opts: &GradCheckOptions,
    analytic: &Gradients<T>,
    centre: &[bool],
) -> Result<Vec<ParamCheck>, GraphError> {
    let param_grads = graph.param_grads(analytic);
    let input_grads = graph.input_grads(analytic);
    let h = T::lit(opts.step);
    let mut entries = Vec::new();

    let names: Vec<String> = graph.param_names().map(str::to_string).collect();
    for name in names {
        let base = graph.param_value(&name).cloned().expect("param value");
        let mut worst = 0.0_f64;
        let mut kinks = 0;
        let idx = coords(base.len(), opts.max_coords);
        for &k in &idx {
            let mut plus = base.clone();
            plus.data_mut()[k] = base.data()[k] + h;
            graph.set_param_value(&name, plus)?;
            let (fp, kp) = scalar_out(graph, feeds, output)?;
            let mut minus = base.clone();
            minus.data_mut()[k] = base.data()[k] - h;
            graph.set_param_value(&name, minus)?;
            let (fm, km) = scalar_out(graph, feeds, output)?;
            if kp != km || kp != centre {
                kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * opts.step);
            let a = param_grads[&name].data()[k].as_f64();
            worst = worst.max(rel_err(a, numeric, probe_floor(fp, fm, opts)));
        }
        graph.set_param_value(&name, base)?;
        entries.push(ParamCheck {
            name,
            coords_checked: idx.len() - kinks,
            kinks_skipped: kinks,
            max_rel_err: worst,
            passed: worst < opts.tolerance,
        });
    }

    if opts.check_inputs {
        let names: Vec<String> = graph.input_names().map(str::to_string).collect();
        for name in names {
            let Some(base) = feeds.get(&name).cloned() else {
                continue;
            };
            let Some(ag) = input_grads.get(&name) else {
                continue;
            };
            let mut worst = 0.0_f64;
            let mut kinks = 0;
            let idx = coords(base.len(), opts.max_coords);
            let mut local = feeds.clone();
            for &k in &idx {
                let mut plus = base.clone();
                plus.data_mut()[k] = base.data()[k] + h;
                local.insert(name.clone(), plus);
                let (fp, kp) = scalar_out(graph, &local, output)?;
                let mut minus = base.clone();
                minus.data_mut()[k] = base.data()[k] - h;
                local.insert(name.clone(), minus);
                let (fm, km) = scalar_out(graph, &local, output)?;
                if kp != km || kp != centre {
                    kinks += 1;
                    continue;
                }
                let numeric = (fp - fm) / (2.0 * opts.step);
                worst = worst.max(rel_err(ag.data()[k].as_f64(), numeric, probe_floor(fp, fm, opts)));
            }
            entries.push(ParamCheck {
                name: format!("input:{name}"),
                coords_checked: idx.len() - kinks,
                kinks_skipped: kinks,
                max_rel_err: worst,
                passed: worst < opts.tolerance,
            });
        }
    }

    Ok(entries)
}
