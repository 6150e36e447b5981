use super::{softmax_in_place, Example, ModelKind, ModelParams, ModelSpec};

/// Reusable activations buffer for one forward/backward pass.
pub(super) struct Scratch {
    pub(super) logits: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    dhidden: Vec<f64>,
}

impl Scratch {
    pub(super) fn new(spec: &ModelSpec) -> Self {
        let h = if spec.kind == ModelKind::TwoLayerMlp { spec.hidden_units } else { 0 };
        Scratch {
            logits: vec![0.0; spec.num_classes],
            pre: vec![0.0; h],
            hidden: vec![0.0; h],
            dhidden: vec![0.0; h],
        }
    }
}

struct Layout {
    d: usize,
    h: usize,
    c: usize,
}

impl Layout {
    fn of(spec: &ModelSpec) -> Self {
        Layout { d: spec.input_dim, h: spec.hidden_units, c: spec.num_classes }
    }
    fn b1(&self) -> usize {
        self.h * self.d
    }
    fn w2(&self) -> usize {
        self.b1() + self.h
    }
    fn b2(&self) -> usize {
        self.w2() + self.c * self.h
    }
}

fn forward(params: &ModelParams, x: &[f64], s: &mut Scratch) {
    let l = Layout::of(&params.spec());
    let w = params.values();
    for u in 0..l.h {
        let row = &w[u * l.d..(u + 1) * l.d];
        let a = w[l.b1() + u] + row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
        s.pre[u] = a;
        s.hidden[u] = a.max(0.0);
    }
    for c in 0..l.c {
        let row = &w[l.w2() + c * l.h..l.w2() + (c + 1) * l.h];
        s.logits[c] = w[l.b2() + c] + row.iter().zip(&s.hidden).map(|(p, q)| p * q).sum::<f64>();
    }
}

pub(super) fn logits(params: &ModelParams, x: &[f64], out: &mut [f64]) {
    let mut s = Scratch::new(&params.spec());
    forward(params, x, &mut s);
    out.copy_from_slice(&s.logits);
}

pub(super) fn accumulate(params: &ModelParams, ex: &Example, grad: Option<&mut [f64]>, s: &mut Scratch) -> f64 {
    let l = Layout::of(&params.spec());
    forward(params, &ex.features, s);
    let true_logit = s.logits[ex.label];
    let lse = softmax_in_place(&mut s.logits);
    let Some(g) = grad else {
        return lse - true_logit;
    };
    let w = params.values();
    s.dhidden.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..l.c {
        let err = s.logits[c] - if c == ex.label { 1.0 } else { 0.0 };
        g[l.b2() + c] += err;
        let base = l.w2() + c * l.h;
        for u in 0..l.h {
            g[base + u] += err * s.hidden[u];
            s.dhidden[u] += err * w[base + u];
        }
    }
    for u in 0..l.h {
        if s.pre[u] <= 0.0 {
            continue;
        }
        let delta = s.dhidden[u];
        g[l.b1() + u] += delta;
        for (gj, xj) in g[u * l.d..(u + 1) * l.d].iter_mut().zip(&ex.features) {
            *gj += delta * xj;
        }
    }
    lse - true_logit
}
