use hifreq_core::{Rng, Tensor};
use hifreq_unet::layers::{
    concat, maxpool2, maxpool2_backward, relu, relu_backward, split, ConvLayer, UpLayer,
};
use hifreq_unet::UnetError;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0)).unwrap()
}

fn naive_conv(l: &ConvLayer<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let [b, cin, h, w] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let (cout, k) = (l.cout(), l.kernel());
    let p = (k / 2) as isize;
    let mut y = Tensor::zeros(&[b, cout, h, w]).unwrap();
    for n in 0..b {
        for co in 0..cout {
            for r in 0..h {
                for c in 0..w {
                    let mut s = l.bias.data()[co];
                    for ci in 0..cin {
                        for kr in 0..k {
                            for kc in 0..k {
                                let (rr, cc) = (r as isize + kr as isize - p, c as isize + kc as isize - p);
                                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                    continue;
                                }
                                s += l.weight.get(&[co, ci, kr, kc]).unwrap()
                                    * x.get(&[n, ci, rr as usize, cc as usize]).unwrap();
                            }
                        }
                    }
                    y.set(&[n, co, r, c], s).unwrap();
                }
            }
        }
    }
    y
}

fn naive_up(l: &UpLayer<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let [b, cin, h, w] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let cout = l.cout();
    let mut y = Tensor::zeros(&[b, cout, 2 * h, 2 * w]).unwrap();
    for n in 0..b {
        for co in 0..cout {
            for r in 0..2 * h {
                for c in 0..2 * w {
                    y.set(&[n, co, r, c], l.bias.data()[co]).unwrap();
                }
            }
        }
        for ci in 0..cin {
            for i in 0..h {
                for j in 0..w {
                    let v = x.get(&[n, ci, i, j]).unwrap();
                    for co in 0..cout {
                        for kr in 0..3 {
                            for kc in 0..3 {
                                let (r, c) = (2 * i + kr, 2 * j + kc);
                                if r == 0 || c == 0 || r > 2 * h || c > 2 * w {
                                    continue;
                                }
                                let idx = [n, co, r - 1, c - 1];
                                let old = y.get(&idx).unwrap();
                                y.set(&idx, old + v * l.weight.get(&[ci, co, kr, kc]).unwrap()).unwrap();
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}


#[test]
fn conv_matches_direct_sum() {
    let mut rng = Rng::new(1);
    for (cin, cout, k, h, w) in [(3, 4, 3, 7, 5), (2, 1, 1, 4, 6), (1, 2, 3, 1, 1)] {
        let mut l = ConvLayer::<f64>::he(cin, cout, k, &mut rng);
        l.bias = random(&[cout], &mut rng);
        let x = random(&[2, cin, h, w], &mut rng);
        assert!(max_diff(&l.forward(&x).unwrap(), &naive_conv(&l, &x)) < 1e-12);
    }
}

#[test]
fn up_matches_scatter_definition() {
    let mut rng = Rng::new(2);
    for (cin, cout, h, w) in [(4, 2, 3, 5), (1, 1, 1, 1), (2, 3, 4, 4)] {
        let mut l = UpLayer::<f64>::he(cin, cout, &mut rng);
        l.bias = random(&[cout], &mut rng);
        let x = random(&[2, cin, h, w], &mut rng);
        let y = l.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, cout, 2 * h, 2 * w]);
        assert!(max_diff(&y, &naive_up(&l, &x)) < 1e-12);
    }
}

#[test]
fn rejects_wrong_channels() {
    let l = ConvLayer::<f64>::zeros(3, 2, 3);
    let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]).unwrap();
    assert!(matches!(l.forward(&x), Err(UnetError::ShapeMismatch { .. })));
    let x = Tensor::<f64>::zeros(&[1, 1, 3, 4]).unwrap();
    assert!(matches!(maxpool2(&x), Err(UnetError::OddSize { .. })));
}

#[test]
fn pool_concat_relu_basics() {
    let x = Tensor::from_vec(&[1, 1, 2, 4], vec![1.0, 3.0, 2.0, 2.0, 0.0, -1.0, 2.0, 1.0]).unwrap();
    let (y, arg) = maxpool2(&x).unwrap();
    assert_eq!(y.data(), &[3.0, 2.0]);
    // ties go to the first index in raster order
    assert_eq!(arg, vec![1, 2]);
    let dy = Tensor::from_vec(&[1, 1, 1, 2], vec![5.0, 7.0]).unwrap();
    let dx = maxpool2_backward(x.shape(), &arg, &dy).unwrap();
    assert_eq!(dx.data(), &[0.0, 5.0, 7.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

    let mut rng = Rng::new(3);
    let a = random(&[2, 2, 3, 3], &mut rng);
    let b = random(&[2, 3, 3, 3], &mut rng);
    let c = concat(&a, &b).unwrap();
    assert_eq!(c.shape(), &[2, 5, 3, 3]);
    let (a2, b2) = split(&c, 2).unwrap();
    assert_eq!((a2, b2), (a, b));

    let r = Tensor::from_vec(&[1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
    let y = relu(&r);
    assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    let g = relu_backward(&y, &Tensor::new(&[1, 1, 1, 3], 1.0).unwrap());
    assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn banded_and_unbanded_conv_agree() {
    // 1200 x 1200 with 8 input channels is split into 48-row bands; the crop straddles row 576
    let mut rng = Rng::new(4);
    let l = ConvLayer::<f32>::he(8, 2, 3, &mut rng);
    let x = Tensor::from_fn(&[1, 8, 1200, 1200], |i| ((i * 2654435761) % 1000) as f32 / 500.0 - 1.0).unwrap();
    let y = l.forward(&x).unwrap();
    let crop = |t: &Tensor<f32>, c: usize| -> Vec<f32> {
        let mut out = Vec::new();
        for ch in 0..c {
            for r in 566..586 {
                let base = (ch * 1200 + r) * 1200;
                out.extend_from_slice(&t.data()[base + 100..base + 130]);
            }
        }
        out
    };
    let mut small = Vec::new();
    for ch in 0..8 {
        for r in 565..587 {
            let base = (ch * 1200 + r) * 1200;
            small.extend_from_slice(&x.data()[base + 99..base + 131]);
        }
    }
    let xs = Tensor::from_vec(&[1, 8, 22, 32], small).unwrap();
    let ys = l.forward(&xs).unwrap();
    let mut inner = Vec::new();
    for ch in 0..2 {
        for r in 1..21 {
            let base = (ch * 22 + r) * 32;
            inner.extend_from_slice(&ys.data()[base + 1..base + 31]);
        }
    }
    let big = crop(&y, 2);
    for (a, b) in big.iter().zip(&inner) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}
