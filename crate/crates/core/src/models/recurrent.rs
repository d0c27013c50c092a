use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{Aggregation, Architecture, RecurrentInput};
use crate::error::{Error, Result};
use crate::params::ParamSet;

/// Which of the two BiLSTM instances to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoder {
    Argument,
    Topic,
}

impl Encoder {
    fn prefix(self) -> &'static str {
        match self {
            Encoder::Argument => "birnn_a",
            Encoder::Topic => "birnn_t",
        }
    }
}

const DIRECTIONS: [&str; 2] = ["forward", "backward"];

pub(super) fn param_shapes(arch: &Architecture) -> BTreeMap<String, Vec<usize>> {
    let h = arch.config.hidden_dimension;
    let mut shapes = BTreeMap::new();
    let mut encoders = vec![(Encoder::Argument, arch.dims.sentence)];
    if arch.config.topic_aware() {
        encoders.push((Encoder::Topic, arch.dims.topic));
    }
    for (enc, input) in encoders {
        for dir in DIRECTIONS {
            let p = format!("{}/{dir}", enc.prefix());
            shapes.insert(format!("{p}/W"), vec![4 * h, input]);
            shapes.insert(format!("{p}/U"), vec![4 * h, h]);
            shapes.insert(format!("{p}/b"), vec![4 * h]);
        }
    }
    let agg = match arch.config.aggregation {
        Aggregation::Concat => 4 * h,
        _ => 2 * h,
    };
    shapes.insert("head/W_final".into(), vec![agg, arch.config.num_classes]);
    shapes.insert("head/b_final".into(), vec![arch.config.num_classes]);
    shapes
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Step {
    row: usize,
    h_prev: Array1<f64>,
    c_prev: Array1<f64>,
    i: Array1<f64>,
    f: Array1<f64>,
    g: Array1<f64>,
    o: Array1<f64>,
    tanh_c: Array1<f64>,
}

struct Lstm<'a> {
    w: ArrayView2<'a, f64>,
    u: ArrayView2<'a, f64>,
    b: ArrayView1<'a, f64>,
    prefix: String,
}

impl<'a> Lstm<'a> {
    fn new(params: &'a ParamSet, prefix: String) -> Self {
        Self {
            w: params.mat(&format!("{prefix}/W")),
            u: params.mat(&format!("{prefix}/U")),
            b: params.vector(&format!("{prefix}/b")),
            prefix,
        }
    }

    fn hidden(&self) -> usize {
        self.u.ncols()
    }

    /// Runs over the rows of `xs` (reversed when `reverse`) and returns the final hidden state.
    fn run(&self, xs: ArrayView2<'_, f64>, reverse: bool) -> (Array1<f64>, Vec<Step>) {
        let h = self.hidden();
        let mut hs = Array1::zeros(h);
        let mut cs = Array1::zeros(h);
        let mut steps = Vec::with_capacity(xs.nrows());
        let order: Vec<usize> = if reverse {
            (0..xs.nrows()).rev().collect()
        } else {
            (0..xs.nrows()).collect()
        };
        for row in order {
            let z = self.w.dot(&xs.row(row)) + self.u.dot(&hs) + self.b;
            let i = z.slice(s![0..h]).mapv(sigmoid);
            let f = z.slice(s![h..2 * h]).mapv(sigmoid);
            let g = z.slice(s![2 * h..3 * h]).mapv(f64::tanh);
            let o = z.slice(s![3 * h..4 * h]).mapv(sigmoid);
            let c = &f * &cs + &i * &g;
            let tanh_c = c.mapv(f64::tanh);
            let h_new = &o * &tanh_c;
            steps.push(Step {
                row,
                h_prev: std::mem::replace(&mut hs, h_new),
                c_prev: std::mem::replace(&mut cs, c),
                i,
                f,
                g,
                o,
                tanh_c,
            });
        }
        (hs, steps)
    }

    /// Backpropagation through time from the gradient of the final hidden state.
    fn backward(
        &self,
        xs: ArrayView2<'_, f64>,
        steps: &[Step],
        dh_final: ArrayView1<'_, f64>,
        grad: &mut ParamSet,
    ) {
        let h = self.hidden();
        let mut dw = Array2::<f64>::zeros(self.w.raw_dim());
        let mut du = Array2::<f64>::zeros(self.u.raw_dim());
        let mut db = Array1::<f64>::zeros(4 * h);
        let mut dh = dh_final.to_owned();
        let mut dc = Array1::<f64>::zeros(h);
        let mut dz = Array1::<f64>::zeros(4 * h);
        for st in steps.iter().rev() {
            let d_o = &dh * &st.tanh_c;
            dc += &(&dh * &st.o * &st.tanh_c.mapv(|t| 1.0 - t * t));
            let di = &dc * &st.g;
            let dg = &dc * &st.i;
            let df = &dc * &st.c_prev;
            dc = &dc * &st.f;
            dz.slice_mut(s![0..h])
                .assign(&(&di * &st.i.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(s![h..2 * h])
                .assign(&(&df * &st.f.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(s![2 * h..3 * h])
                .assign(&(&dg * &st.g.mapv(|v| 1.0 - v * v)));
            dz.slice_mut(s![3 * h..4 * h])
                .assign(&(&d_o * &st.o.mapv(|v| v * (1.0 - v))));
            outer_add(&mut dw, dz.view(), xs.row(st.row));
            outer_add(&mut du, dz.view(), st.h_prev.view());
            db += &dz;
            dh = self.u.t().dot(&dz);
        }
        let mut g = grad.mat_mut(&format!("{}/W", self.prefix));
        g += &dw;
        let mut g = grad.mat_mut(&format!("{}/U", self.prefix));
        g += &du;
        let mut g = grad.vector_mut(&format!("{}/b", self.prefix));
        g += &db;
    }
}

fn outer_add(m: &mut Array2<f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    for (mut row, &ai) in m.rows_mut().into_iter().zip(a) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}

struct BiCache {
    forward: Vec<Step>,
    backward: Vec<Step>,
}

fn encode(params: &ParamSet, enc: Encoder, xs: ArrayView2<'_, f64>) -> (Array1<f64>, BiCache) {
    let fwd = Lstm::new(params, format!("{}/forward", enc.prefix()));
    let bwd = Lstm::new(params, format!("{}/backward", enc.prefix()));
    let (hf, forward) = fwd.run(xs, false);
    let (hb, backward) = bwd.run(xs, true);
    (concatenate![Axis(0), hf, hb], BiCache { forward, backward })
}

fn encode_backward(
    params: &ParamSet,
    enc: Encoder,
    xs: ArrayView2<'_, f64>,
    cache: &BiCache,
    dh: ArrayView1<'_, f64>,
    grad: &mut ParamSet,
) {
    let h = dh.len() / 2;
    Lstm::new(params, format!("{}/forward", enc.prefix())).backward(
        xs,
        &cache.forward,
        dh.slice(s![..h]),
        grad,
    );
    Lstm::new(params, format!("{}/backward", enc.prefix())).backward(
        xs,
        &cache.backward,
        dh.slice(s![h..]),
        grad,
    );
}

fn check_input(params: &ParamSet, enc: Encoder, xs: ArrayView2<'_, f64>) -> Result<()> {
    let name = format!("{}/forward/W", enc.prefix());
    let w = params
        .get(&name)
        .ok_or_else(|| Error::ShapeMismatch(vec![name.clone()]))?;
    if xs.nrows() == 0 {
        return Err(Error::Empty("input sequence"));
    }
    let expected = w.shape()[1];
    if xs.ncols() != expected {
        return Err(Error::Dimension {
            expected,
            got: xs.ncols(),
        });
    }
    Ok(())
}

pub(super) fn encode_checked(
    xs: ArrayView2<'_, f64>,
    params: &ParamSet,
    enc: Encoder,
) -> Result<Array1<f64>> {
    check_input(params, enc, xs)?;
    Ok(encode(params, enc, xs).0)
}

pub(super) fn aggregate(
    h_s: ArrayView1<'_, f64>,
    h_t: ArrayView1<'_, f64>,
    mode: Aggregation,
) -> Result<Array1<f64>> {
    let same = || {
        if h_s.len() == h_t.len() {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: h_s.len(),
                got: h_t.len(),
            })
        }
    };
    Ok(match mode {
        Aggregation::Add => {
            same()?;
            &h_s + &h_t
        }
        Aggregation::Hadamard => {
            same()?;
            &h_s * &h_t
        }
        Aggregation::Concat => concatenate![Axis(0), h_s, h_t],
        Aggregation::None => h_s.to_owned(),
    })
}

pub(super) struct Cache {
    sentence: BiCache,
    topic: Option<(BiCache, Array1<f64>)>,
    h_s: Array1<f64>,
    h_l: Array1<f64>,
}

pub(super) fn forward(
    arch: &Architecture,
    params: &ParamSet,
    input: &RecurrentInput,
) -> Result<(Array1<f64>, Cache)> {
    check_input(params, Encoder::Argument, input.sentence.view())?;
    let (h_s, sentence) = encode(params, Encoder::Argument, input.sentence.view());
    let mode = arch.config.aggregation;
    let (h_l, topic) = if mode == Aggregation::None {
        (h_s.clone(), None)
    } else {
        let xt = input
            .topic
            .as_ref()
            .ok_or_else(|| Error::invalid("topic vectors are required for a topic-aware model"))?;
        check_input(params, Encoder::Topic, xt.view())?;
        let (h_t, tc) = encode(params, Encoder::Topic, xt.view());
        (aggregate(h_s.view(), h_t.view(), mode)?, Some((tc, h_t)))
    };
    let logits = h_l.dot(&params.mat("head/W_final")) + params.vector("head/b_final");
    Ok((
        logits,
        Cache {
            sentence,
            topic,
            h_s,
            h_l,
        },
    ))
}

pub(super) fn backward(
    arch: &Architecture,
    params: &ParamSet,
    input: &RecurrentInput,
    cache: &Cache,
    dlogits: ArrayView1<'_, f64>,
    grad: &mut ParamSet,
) {
    let w_final = params.mat("head/W_final");
    {
        let mut gw = grad.mat_mut("head/W_final");
        for (mut row, &hi) in gw.rows_mut().into_iter().zip(&cache.h_l) {
            row.scaled_add(hi, &dlogits);
        }
    }
    let mut gb = grad.vector_mut("head/b_final");
    gb += &dlogits;
    let dh_l = w_final.dot(&dlogits);

    let n = cache.h_s.len();
    let (dh_s, dh_t) = match (arch.config.aggregation, &cache.topic) {
        (Aggregation::None, _) | (_, None) => (dh_l, None),
        (Aggregation::Add, Some(_)) => (dh_l.clone(), Some(dh_l)),
        (Aggregation::Hadamard, Some((_, h_t))) => (&dh_l * h_t, Some(&dh_l * &cache.h_s)),
        (Aggregation::Concat, Some(_)) => (
            dh_l.slice(s![..n]).to_owned(),
            Some(dh_l.slice(s![n..]).to_owned()),
        ),
    };
    encode_backward(
        params,
        Encoder::Argument,
        input.sentence.view(),
        &cache.sentence,
        dh_s.view(),
        grad,
    );
    if let (Some(dh_t), Some((tc, _)), Some(xt)) = (dh_t, &cache.topic, &input.topic) {
        encode_backward(params, Encoder::Topic, xt.view(), tc, dh_t.view(), grad);
    }
}
