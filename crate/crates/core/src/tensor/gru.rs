use super::gemm::{matvec_acc, matvec_t_acc, outer_acc};
use super::{Gradients, Init, ParamId, ParamStore, Params, Tensor};
use crate::error::{Error, Result};

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(Wz·x + Uz·h + bz)
/// r  = σ(Wr·x + Ur·h + br)
/// h̃  = tanh(Wh·x + Uh·(r ⊙ h) + bh)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    gates: [Gate; 3],
}

#[derive(Clone, Copy, Debug)]
struct Gate {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

const UPDATE: usize = 0;
const RESET: usize = 1;
const CANDIDATE: usize = 2;

#[derive(Clone, Debug)]
pub struct GruCache {
    x: Vec<f64>,
    h: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    rh: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl GruCell {
    pub fn register(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden_dim: usize) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let init = Init::Uniform { bound };
        let gates = ["z", "r", "h"].map(|g| Gate {
            w: store.register(&format!("{prefix}.w{g}"), &[hidden_dim, input_dim], init, true),
            u: store.register(&format!("{prefix}.u{g}"), &[hidden_dim, hidden_dim], init, true),
            b: store.register(&format!("{prefix}.b{g}"), &[hidden_dim], Init::Zeros, false),
        });
        Self {
            input_dim,
            hidden_dim,
            gates,
        }
    }

    pub fn param_count(input_dim: usize, hidden_dim: usize) -> usize {
        3 * (hidden_dim * input_dim + hidden_dim * hidden_dim + hidden_dim)
    }

    /// Bias of the update gate.
    pub fn update_bias(&self) -> ParamId {
        self.gates[UPDATE].b
    }

    pub fn candidate_bias(&self) -> ParamId {
        self.gates[CANDIDATE].b
    }

    fn check(&self, x: &Tensor, h: &Tensor) -> Result<()> {
        if x.shape() != [self.input_dim] || h.shape() != [self.hidden_dim] {
            return Err(Error::Dimension(format!(
                "GRU cell ({} → {}) got x {:?} and h {:?}",
                self.input_dim,
                self.hidden_dim,
                x.shape(),
                h.shape()
            )));
        }
        Ok(())
    }

    fn pre_activation(&self, params: &Params, gate: usize, x: &[f64], h: &[f64]) -> Vec<f64> {
        let g = self.gates[gate];
        let (d, hd) = (self.input_dim, self.hidden_dim);
        let mut a = params.get(g.b).data().to_vec();
        matvec_acc(params.get(g.w).data(), hd, d, x, &mut a);
        matvec_acc(params.get(g.u).data(), hd, hd, h, &mut a);
        a
    }

    pub fn forward(&self, params: &Params, x: &Tensor, h: &Tensor) -> Result<(Tensor, GruCache)> {
        self.check(x, h)?;
        let (x, h) = (x.data(), h.data());
        let z: Vec<f64> = self.pre_activation(params, UPDATE, x, h).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = self.pre_activation(params, RESET, x, h).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(r, h)| r * h).collect();
        let cand: Vec<f64> = self
            .pre_activation(params, CANDIDATE, x, &rh)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let next = (0..self.hidden_dim)
            .map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i])
            .collect();
        let cache = GruCache {
            x: x.to_vec(),
            h: h.to_vec(),
            z,
            r,
            cand,
            rh,
        };
        Ok((Tensor::vector(next), cache))
    }

    /// Returns `(dL/dx, dL/dh_prev)`.
    pub fn backward(
        &self,
        params: &Params,
        grads: &mut Gradients,
        cache: &GruCache,
        grad_h: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        grad_h.expect_shape(&[self.hidden_dim])?;
        let (d, hd) = (self.input_dim, self.hidden_dim);
        let gh = grad_h.data();
        let GruCache { x, h, z, r, cand, rh } = cache;

        let mut dx = vec![0.0; d];
        let mut dh: Vec<f64> = (0..hd).map(|i| gh[i] * (1.0 - z[i])).collect();

        // candidate
        let da_h: Vec<f64> = (0..hd)
            .map(|i| gh[i] * z[i] * (1.0 - cand[i] * cand[i]))
            .collect();
        let gate = self.gates[CANDIDATE];
        outer_acc(grads.get_mut(gate.w).data_mut(), &da_h, x);
        outer_acc(grads.get_mut(gate.u).data_mut(), &da_h, rh);
        add(grads.get_mut(gate.b).data_mut(), &da_h);
        matvec_t_acc(params.get(gate.w).data(), hd, d, &da_h, &mut dx);
        let mut drh = vec![0.0; hd];
        matvec_t_acc(params.get(gate.u).data(), hd, hd, &da_h, &mut drh);
        for i in 0..hd {
            dh[i] += drh[i] * r[i];
        }

        // reset and update gates share the same shape of update
        let da_r: Vec<f64> = (0..hd).map(|i| drh[i] * h[i] * r[i] * (1.0 - r[i])).collect();
        let da_z: Vec<f64> = (0..hd)
            .map(|i| gh[i] * (cand[i] - h[i]) * z[i] * (1.0 - z[i]))
            .collect();
        for (gate, da) in [(self.gates[RESET], &da_r), (self.gates[UPDATE], &da_z)] {
            outer_acc(grads.get_mut(gate.w).data_mut(), da, x);
            outer_acc(grads.get_mut(gate.u).data_mut(), da, h);
            add(grads.get_mut(gate.b).data_mut(), da);
            matvec_t_acc(params.get(gate.w).data(), hd, d, da, &mut dx);
            matvec_t_acc(params.get(gate.u).data(), hd, hd, da, &mut dh);
        }
        Ok((Tensor::vector(dx), Tensor::vector(dh)))
    }
}

fn add(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cell(d: usize, h: usize, seed: Option<u64>) -> (ParamStore, GruCell) {
        let mut store = ParamStore::new();
        let cell = GruCell::register(&mut store, "gru", d, h);
        if let Some(seed) = seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for id in store.params.ids().collect::<Vec<_>>() {
                for v in store.params.get_mut(id).data_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
        }
        (store, cell)
    }

    #[test]
    fn zero_params_and_state_stay_zero() {
        let (store, cell) = cell(3, 4, None);
        let (h, _) = cell
            .forward(&store.params, &Tensor::vector(vec![1.0, -2.0, 0.5]), &Tensor::zeros(&[4]))
            .unwrap();
        assert_eq!(h.data(), &[0.0; 4]);
    }

    #[test]
    fn saturated_update_gate_replaces_state() {
        let (mut store, cell) = cell(2, 3, None);
        store.params.get_mut(cell.update_bias()).fill(50.0);
        let h_prev = Tensor::vector(vec![0.9, -0.7, 0.3]);
        let (h, _) = cell
            .forward(&store.params, &Tensor::vector(vec![1.0, 1.0]), &h_prev)
            .unwrap();
        for v in h.data() {
            assert!(v.abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn matches_scalar_transcription() {
        let (d, hd) = (3, 4);
        let (store, cell) = cell(d, hd, Some(21));
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..hd).map(|_| rng.random_range(-0.9..0.9)).collect();
        let p = |name: &str| store.params.by_name(&format!("gru.{name}")).unwrap().data().to_vec();
        let (wz, uz, bz) = (p("wz"), p("uz"), p("bz"));
        let (wr, ur, br) = (p("wr"), p("ur"), p("br"));
        let (wh, uh, bh) = (p("wh"), p("uh"), p("bh"));
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());

        let mut r = vec![0.0; hd];
        let mut z = vec![0.0; hd];
        for i in 0..hd {
            let mut az = bz[i];
            let mut ar = br[i];
            for j in 0..d {
                az += wz[i * d + j] * x[j];
                ar += wr[i * d + j] * x[j];
            }
            for j in 0..hd {
                az += uz[i * hd + j] * h[j];
                ar += ur[i * hd + j] * h[j];
            }
            z[i] = sig(az);
            r[i] = sig(ar);
        }
        let mut expect = vec![0.0; hd];
        for i in 0..hd {
            let mut ah = bh[i];
            for j in 0..d {
                ah += wh[i * d + j] * x[j];
            }
            for j in 0..hd {
                ah += uh[i * hd + j] * r[j] * h[j];
            }
            expect[i] = (1.0 - z[i]) * h[i] + z[i] * ah.tanh();
        }

        let (got, _) = cell
            .forward(&store.params, &Tensor::vector(x), &Tensor::vector(h))
            .unwrap();
        for (a, b) in got.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let (store, cell) = cell(3, 4, None);
        assert!(matches!(
            cell.forward(&store.params, &Tensor::zeros(&[2]), &Tensor::zeros(&[4])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn param_count_closed_form() {
        assert_eq!(GruCell::param_count(4, 8), 312);
        let (store, _) = cell(4, 8, None);
        assert_eq!(store.params.scalar_count(), 312);
    }
}
