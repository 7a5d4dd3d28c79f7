//! Multi-resolution STFT discriminator with least-squares objectives and L1
//! feature matching.
//!
//! Each resolution turns the log-magnitude STFT into a channels-over-frames
//! map and runs a small 1-D conv stack (bins -> 32 -> 32 -> 1, kernel 3,
//! leaky ReLU). The two intermediate activations are the feature-matching
//! taps. Resolutions longer than the signal are skipped.

use rand_chacha::ChaCha8Rng;

use crate::nn::{ParamStore, Tape, Tid};
use crate::training::losses::LOG_EPS;

pub const RESOLUTIONS: [(usize, usize); 3] = [(1024, 256), (512, 128), (256, 64)];
const WIDTH: usize = 32;
const LEAK: f32 = 0.1;

#[derive(Debug, Clone, Default)]
pub struct Discriminator;

impl Discriminator {
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for (r, (n_fft, _)) in RESOLUTIONS.iter().enumerate() {
            let bins = n_fft / 2 + 1;
            let dims = [(bins, WIDTH), (WIDTH, WIDTH), (WIDTH, 1)];
            for (j, (cin, cout)) in dims.iter().enumerate() {
                let fan_in = (cin * 3) as f32;
                store.init_normal(
                    format!("disc.res{r}.conv{j}.w"),
                    vec![*cout, *cin, 3],
                    1.0 / fan_in.sqrt(),
                    rng,
                );
                store.init_const(format!("disc.res{r}.conv{j}.b"), vec![*cout], 0.0);
            }
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for r in 0..RESOLUTIONS.len() {
            for j in 0..3 {
                names.push(format!("disc.res{r}.conv{j}.w"));
                names.push(format!("disc.res{r}.conv{j}.b"));
            }
        }
        names
    }

    /// Score a `[B,T]` batch: per feasible resolution, the feature taps and
    /// the `[B,1,frames]` score map.
    pub fn forward_graph(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        wave: Tid,
    ) -> Vec<(Vec<Tid>, Tid)> {
        let n = t.shape(wave)[1];
        let mut out = Vec::new();
        for (r, &(n_fft, hop)) in RESOLUTIONS.iter().enumerate() {
            if n_fft > n {
                continue;
            }
            let mag = t.stft_mag(wave, n_fft, hop); // [B, frames, bins]
            let lg = t.log_eps(mag, LOG_EPS as f32);
            let x = t.transpose12(lg); // [B, bins, frames]
            let mut feats = Vec::new();
            let mut h = x;
            for j in 0..3 {
                let w = t.param(store, &format!("disc.res{r}.conv{j}.w"));
                let b = t.param(store, &format!("disc.res{r}.conv{j}.b"));
                h = t.conv1d(h, w, 1, 1);
                h = t.bias_channels(h, b);
                if j < 2 {
                    h = t.leaky_relu(h, LEAK);
                    feats.push(h);
                }
            }
            out.push((feats, h));
        }
        out
    }
}

/// Least-squares GAN penalty pulling `score` toward `target`.
pub fn lsgan_toward(t: &mut Tape, score: Tid, target: f32) -> Tid {
    let shifted = if target == 0.0 {
        score
    } else {
        let tgt = t.constant(
            vec![target; t.value(score).len()],
            t.shape(score).to_vec(),
        );
        t.sub(score, tgt)
    };
    let sq = t.mul(shifted, shifted);
    t.mean_all(sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn untrained_scores_are_finite_and_losses_nonnegative() {
        let disc = Discriminator;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        disc.init_params(&mut store, &mut rng);
        let mut t = Tape::new();
        let x: Vec<f32> = (0..2 * 1200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xi = t.constant(x, vec![2, 1200]);
        let res = disc.forward_graph(&mut t, &store, xi);
        // 1200 samples fit the 1024, 512 and 256 windows
        assert_eq!(res.len(), 3);
        for (feats, score) in &res {
            assert_eq!(feats.len(), 2);
            assert!(t.value(*score).iter().all(|v| v.is_finite()));
            let l = lsgan_toward(&mut t, *score, 1.0);
            assert!(t.scalar(l) >= 0.0);
        }
    }

    #[test]
    fn identical_inputs_have_zero_feature_distance() {
        let disc = Discriminator;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        disc.init_params(&mut store, &mut rng);
        let mut t = Tape::new();
        let x: Vec<f32> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = t.constant(x.clone(), vec![1, 400]);
        let b = t.constant(x, vec![1, 400]);
        let ra = disc.forward_graph(&mut t, &store, a);
        let rb = disc.forward_graph(&mut t, &store, b);
        for ((fa, _), (fb, _)) in ra.iter().zip(&rb) {
            for (&na, &nb) in fa.iter().zip(fb) {
                let d = t.sub(na, nb);
                let ab = t.abs(d);
                let l = t.mean_all(ab);
                assert_eq!(t.scalar(l), 0.0);
            }
        }
    }

    #[test]
    fn discriminator_gradients_match_finite_differences() {
        let disc = Discriminator;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        disc.init_params(&mut store, &mut rng);
        let x: Vec<f32> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // only resolution 256 fits a 300-sample wave -> check its tensors
        let names: Vec<String> = (0..3)
            .flat_map(|j| {
                vec![
                    format!("disc.res2.conv{j}.w"),
                    format!("disc.res2.conv{j}.b"),
                ]
            })
            .collect();
        let check = crate::nn::gradcheck::check_params(
            &mut store,
            &names,
            6,
            1e-2,
            2e-3,
            &mut |t, s| {
                let xi = t.constant(x.clone(), vec![1, 300]);
                let res = disc.forward_graph(t, s, xi);
                let (_, score) = &res[0];
                lsgan_toward(t, *score, 1.0)
            },
        );
        assert!(
            check.passed(),
            "checked {} worst {} failures {:?}",
            check.checked,
            check.worst_rel,
            check.failures
        );
    }
}
