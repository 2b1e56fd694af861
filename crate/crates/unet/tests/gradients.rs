use hifreq_core::{Rng, Tensor};
use hifreq_unet::layers::{maxpool2, maxpool2_backward, relu, relu_backward, ConvLayer, UpLayer};
use hifreq_unet::{masked_mse, UNet};

/// Step, relative tolerance, absolute round-off allowance.
const PRIMITIVE: (f64, f64, f64) = (1e-6, 1e-6, 0.0);
const END_TO_END: (f64, f64, f64) = (1e-5, 1e-5, 1e-10);

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0)).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Relative error with an absolute allowance for finite-difference round-off.
fn rel_atol(a: f64, b: f64, atol: f64) -> f64 {
    ((a - b).abs() - atol).max(0.0) / a.abs().max(b.abs()).max(1e-8)
}

/// Central difference with step `h`.
fn central(h: f64, f: &mut dyn FnMut(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Central differences of `f` at every coordinate of `t` (or `samples` random ones).
fn check_tensor(
    t: &mut Tensor<f64>,
    grad: &Tensor<f64>,
    samples: Option<usize>,
    rng: &mut Rng,
    (h, tol, atol): (f64, f64, f64),
    f: &mut dyn FnMut(&Tensor<f64>) -> f64,
) {
    let idx: Vec<usize> = match samples {
        Some(n) => (0..n).map(|_| rng.below(t.len())).collect(),
        None => (0..t.len()).collect(),
    };
    for i in idx {
        let orig = t.data()[i];
        let num = central(h, &mut |s| {
            t.data_mut()[i] = orig + s;
            let v = f(t);
            t.data_mut()[i] = orig;
            v
        });
        let e = rel_atol(grad.data()[i], num, atol);
        assert!(e < tol, "coord {i}: analytic {} numeric {num} rel {e}", grad.data()[i]);
    }
}

#[test]
fn conv_gradients() {
    let mut rng = Rng::new(10);
    for k in [1, 3] {
        let mut l = ConvLayer::<f64>::he(3, 2, k, &mut rng);
        l.bias = random(&[2], &mut rng);
        let x = random(&[2, 3, 5, 6], &mut rng);
        let r = random(&[2, 2, 5, 6], &mut rng);
        let (dx, g) = l.backward(&x, &r, true).unwrap();
        let dx = dx.unwrap();
        let l0 = l.clone();
        check_tensor(&mut x.clone(), &dx, None, &mut rng, PRIMITIVE, &mut |x| dot(&l0.forward(x).unwrap(), &r));
        let mut w = l.weight.clone();
        check_tensor(&mut w, &g.weight, None, &mut rng, PRIMITIVE, &mut |w| {
            let mut m = l0.clone();
            m.weight = w.clone();
            dot(&m.forward(&x).unwrap(), &r)
        });
        let mut b = l.bias.clone();
        check_tensor(&mut b, &g.bias, None, &mut rng, PRIMITIVE, &mut |b| {
            let mut m = l0.clone();
            m.bias = b.clone();
            dot(&m.forward(&x).unwrap(), &r)
        });
        let (none, _) = l.backward(&x, &r, false).unwrap();
        assert!(none.is_none());
    }
}

#[test]
fn up_gradients() {
    let mut rng = Rng::new(11);
    let mut l = UpLayer::<f64>::he(3, 2, &mut rng);
    l.bias = random(&[2], &mut rng);
    let x = random(&[2, 3, 3, 4], &mut rng);
    let r = random(&[2, 2, 6, 8], &mut rng);
    let (dx, g) = l.backward(&x, &r).unwrap();
    let l0 = l.clone();
    check_tensor(&mut x.clone(), &dx, None, &mut rng, PRIMITIVE, &mut |x| dot(&l0.forward(x).unwrap(), &r));
    check_tensor(&mut l.weight.clone(), &g.weight, None, &mut rng, PRIMITIVE, &mut |w| {
        let mut m = l0.clone();
        m.weight = w.clone();
        dot(&m.forward(&x).unwrap(), &r)
    });
    check_tensor(&mut l.bias.clone(), &g.bias, None, &mut rng, PRIMITIVE, &mut |b| {
        let mut m = l0.clone();
        m.bias = b.clone();
        dot(&m.forward(&x).unwrap(), &r)
    });
}

#[test]
fn relu_and_pool_gradients() {
    let mut rng = Rng::new(12);
    // keep values away from the kinks so the finite differences are smooth
    let mut x = Tensor::from_fn(&[1, 2, 4, 6], |_| {
        let v = rng.uniform(0.01, 1.0);
        if rng.below(2) == 0 { v } else { -v }
    })
    .unwrap();
    let r = random(&[1, 2, 4, 6], &mut rng);
    let y = relu(&x);
    let dx = relu_backward(&y, &r);
    check_tensor(&mut x, &dx, None, &mut rng, PRIMITIVE, &mut |x| dot(&relu(x), &r));

    let mut x = Tensor::from_fn(&[2, 2, 4, 6], |i| ((i * 37) % 48) as f64 * 0.1 + 0.01 * i as f64).unwrap();
    let r = random(&[2, 2, 2, 3], &mut rng);
    let (_, arg) = maxpool2(&x).unwrap();
    let dx = maxpool2_backward(x.shape(), &arg, &r).unwrap();
    check_tensor(&mut x, &dx, None, &mut rng, PRIMITIVE, &mut |x| dot(&maxpool2(x).unwrap().0, &r));
}

struct Problem {
    x: Tensor<f64>,
    y: Tensor<f64>,
    mask: Tensor<f64>,
}

impl Problem {
    fn new(rng: &mut Rng, size: usize) -> Self {
        let x = random(&[2, 3, size, size], rng);
        let y = random(&[2, 1, size, size], rng);
        let mask = Tensor::from_fn(&[2, 1, size, size], |_| if rng.below(5) == 0 { 0.0 } else { 1.0 }).unwrap();
        Self { x, y, mask }
    }

    fn loss(&self, m: &UNet<f64>) -> f64 {
        masked_mse(&m.forward(&self.x).unwrap(), &self.y, &self.mask).unwrap().value
    }

    fn grads(&self, m: &UNet<f64>) -> UNet<f64> {
        let (out, trace) = m.forward_train(&self.x).unwrap();
        let l = masked_mse(&out, &self.y, &self.mask).unwrap();
        m.backward(&trace, &l.grad).unwrap()
    }
}

/// Model with small positive biases so that few ReLUs sit exactly at zero.
fn test_model(width: usize, rng: &mut Rng) -> UNet<f64> {
    let mut m = UNet::<f64>::new(width, rng);
    for (name, p) in m.param_names().into_iter().zip(m.params_mut()) {
        if name.ends_with("bias") {
            for v in p.data_mut() {
                *v = rng.uniform(0.0, 0.1);
            }
        }
    }
    m
}

#[test]
fn end_to_end_gradients_f64() {
    let mut rng = Rng::new(13);
    let model = test_model(4, &mut rng);
    let prob = Problem::new(&mut rng, 24);
    let grads = prob.grads(&model);
    let names = model.param_names();
    for (i, name) in names.iter().enumerate() {
        let g = grads.params()[i].clone();
        let mut t = model.params()[i].clone();
        let mut probe = model.clone();
        let mut eval = |t: &Tensor<f64>| {
            *probe.params_mut()[i] = t.clone();
            prob.loss(&probe)
        };
        check_tensor(&mut t, &g, Some(4), &mut rng, END_TO_END, &mut eval);

        // directional derivative along the gradient perturbed by a random direction
        let gn = dot(&g, &g).sqrt().max(1e-12);
        let d = Tensor::from_fn(t.shape(), |k| g.data()[k] / gn + 0.5 * rng.uniform(-1.0, 1.0) / (t.len() as f64).sqrt()).unwrap();
        let norm = dot(&d, &d).sqrt();
        let analytic = dot(&g, &d) / norm;
        let shifted = |s: f64| {
            Tensor::from_fn(t.shape(), |k| t.data()[k] + s * d.data()[k] / norm).unwrap()
        };
        let num = central(1e-6, &mut |s| eval(&shifted(s)));
        assert!(rel(analytic, num) < END_TO_END.1, "{name}: {analytic} vs {num}");
    }
}

#[test]
fn end_to_end_gradients_f32() {
    let mut rng = Rng::new(14);
    let model64 = test_model(4, &mut rng);
    let model32 = model64.cast::<f32>();
    let back64 = model32.cast::<f64>();
    let prob = Problem::new(&mut rng, 24);
    let (out, trace) = model32.forward_train(&prob.x.cast()).unwrap();
    let l = masked_mse(&out, &prob.y.cast(), &prob.mask.cast()).unwrap();
    let grads = model32.backward(&trace, &l.grad).unwrap();
    for (i, name) in model32.param_names().iter().enumerate() {
        let g: Tensor<f64> = grads.params()[i].cast();
        let t = back64.params()[i].clone();
        let gn = dot(&g, &g).sqrt().max(1e-12);
        let d = Tensor::from_fn(t.shape(), |k| g.data()[k] / gn + 0.5 * rng.uniform(-1.0, 1.0) / (t.len() as f64).sqrt()).unwrap();
        let norm = dot(&d, &d).sqrt();
        let analytic = dot(&g, &d) / norm;
        let mut probe = back64.clone();
        let mut eval = |s: f64| {
            *probe.params_mut()[i] = Tensor::from_fn(t.shape(), |k| t.data()[k] + s * d.data()[k] / norm).unwrap();
            prob.loss(&probe)
        };
        let num = central(1e-6, &mut eval);
        assert!(rel(analytic, num) < 1e-2, "{name}: {analytic} vs {num}");
    }
}
