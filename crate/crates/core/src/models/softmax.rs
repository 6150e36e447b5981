use super::{softmax_in_place, Example, ModelParams};

pub(super) fn logits(params: &ModelParams, x: &[f64], out: &mut [f64]) {
    let spec = params.spec();
    let d = spec.input_dim;
    let w = params.values();
    let bias = &w[spec.num_classes * d..];
    for (c, z) in out.iter_mut().enumerate() {
        let row = &w[c * d..(c + 1) * d];
        *z = bias[c] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Adds the (un-normalized) gradient of one example to `grad` and returns its loss.
pub(super) fn accumulate(
    params: &ModelParams,
    ex: &Example,
    grad: Option<&mut [f64]>,
    z: &mut Vec<f64>,
) -> f64 {
    let spec = params.spec();
    let (d, classes) = (spec.input_dim, spec.num_classes);
    z.resize(classes, 0.0);
    logits(params, &ex.features, z);
    let true_logit = z[ex.label];
    let lse = softmax_in_place(z);
    if let Some(g) = grad {
        let (gw, gb) = g.split_at_mut(classes * d);
        for c in 0..classes {
            let err = z[c] - if c == ex.label { 1.0 } else { 0.0 };
            gb[c] += err;
            for (gj, xj) in gw[c * d..(c + 1) * d].iter_mut().zip(&ex.features) {
                *gj += err * xj;
            }
        }
    }
    lse - true_logit
}
