//! Forward and reverse passes of the velocity network. The architecture is
//! fixed — input projection, FiLM-modulated pre-norm attention blocks with
//! gated feed-forwards, a final RMS norm and a zero-initialized head — so the
//! reverse pass is a hand-written mirror of the forward, op by op, with no
//! general autodiff.

use super::ModelParams;
use crate::error::{Error, Result};

const RMS_EPS: f64 = 1e-8;

#[inline]
fn sigma(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// y[t] = W x[t] + b for every token row; w is (out x in) row-major.
fn linear(w: &[f64], b: &[f64], x: &[f64], n_tok: usize, n_in: usize, n_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; n_tok * n_out];
    for t in 0..n_tok {
        let xr = &x[t * n_in..(t + 1) * n_in];
        let yr = &mut y[t * n_out..(t + 1) * n_out];
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let mut s = b[o];
            for i in 0..n_in {
                s += row[i] * xr[i];
            }
            yr[o] = s;
        }
    }
    y
}

/// Reverse of [`linear`]: accumulates dw/db, returns dx.
fn linear_back(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    n_tok: usize,
    n_in: usize,
    n_out: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n_tok * n_in];
    for t in 0..n_tok {
        let xr = &x[t * n_in..(t + 1) * n_in];
        let dyr = &dy[t * n_out..(t + 1) * n_out];
        let dxr = &mut dx[t * n_in..(t + 1) * n_in];
        for o in 0..n_out {
            let g = dyr[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wrow = &w[o * n_in..(o + 1) * n_in];
            let dwrow = &mut dw[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                dwrow[i] += g * xr[i];
                dxr[i] += g * wrow[i];
            }
        }
    }
    dx
}

/// Gain-only RMS normalization; returns (normalized-and-gained, per-token rms).
fn rmsnorm(x: &[f64], gain: &[f64], n_tok: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; n_tok * width];
    let mut rms = vec![0.0; n_tok];
    for t in 0..n_tok {
        let xr = &x[t * width..(t + 1) * width];
        let mean_sq = xr.iter().map(|v| v * v).sum::<f64>() / width as f64;
        let r = (mean_sq + RMS_EPS).sqrt();
        rms[t] = r;
        for i in 0..width {
            y[t * width + i] = gain[i] * xr[i] / r;
        }
    }
    (y, rms)
}

fn rmsnorm_back(
    x: &[f64],
    rms: &[f64],
    gain: &[f64],
    dy: &[f64],
    n_tok: usize,
    width: usize,
    dgain: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n_tok * width];
    let wf = width as f64;
    for t in 0..n_tok {
        let xr = &x[t * width..(t + 1) * width];
        let dyr = &dy[t * width..(t + 1) * width];
        let r = rms[t];
        let mut inner = 0.0;
        for i in 0..width {
            dgain[i] += dyr[i] * xr[i] / r;
            inner += dyr[i] * gain[i] * xr[i];
        }
        let c = inner / (wf * r * r * r);
        for i in 0..width {
            dx[t * width + i] = dyr[i] * gain[i] / r - xr[i] * c;
        }
    }
    dx
}

pub(crate) struct LayerCache {
    h_in: Vec<f64>,
    r1: Vec<f64>,
    a_norm: Vec<f64>,
    gamma: Vec<f64>,
    a_film: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    attn_cat: Vec<f64>,
    h_mid: Vec<f64>,
    r2: Vec<f64>,
    f_norm: Vec<f64>,
    z: Vec<f64>,
    act: Vec<f64>,
}

pub(crate) struct Cache {
    x: Vec<f64>,
    embed_in: Vec<f64>,
    e: Vec<f64>,
    layers: Vec<LayerCache>,
    h_final: Vec<f64>,
    rf: Vec<f64>,
    fin_norm: Vec<f64>,
    n_tok: usize,
}

/// Full forward pass over one configuration; the cache carries everything the
/// reverse pass needs.
pub(crate) fn forward(
    params: &ModelParams,
    x: &[f64],
    embed_in: &[f64],
    n_tok: usize,
) -> Result<(Vec<f64>, Cache)> {
    let arch = &params.arch;
    let w = arch.width;
    let d = arch.input_dim;
    let hd = w / arch.heads;
    if x.len() != n_tok * d {
        return Err(Error::ShapeMismatch(format!(
            "expected {} inputs, got {}",
            n_tok * d,
            x.len()
        )));
    }
    if embed_in.len() != arch.embed_in_len() {
        return Err(Error::ShapeMismatch(format!(
            "expected embedding input of {}, got {}",
            arch.embed_in_len(),
            embed_in.len()
        )));
    }

    let e = linear(
        &params.embed_w.data,
        &params.embed_b.data,
        embed_in,
        1,
        embed_in.len(),
        w,
    );
    let mut h = linear(&params.input_w.data, &params.input_b.data, x, n_tok, d, w);

    let scale = 1.0 / (hd as f64).sqrt();
    let mut layers = Vec::with_capacity(arch.depth);
    for lp in &params.layers {
        let h_in = h.clone();
        let (a_norm, r1) = rmsnorm(&h_in, &lp.norm1_gain.data, n_tok, w);
        let gamma = linear(&lp.film_gamma_w.data, &lp.film_gamma_b.data, &e, 1, w, w);
        let beta_shift = linear(&lp.film_beta_w.data, &lp.film_beta_b.data, &e, 1, w, w);
        let mut a_film = vec![0.0; n_tok * w];
        for t in 0..n_tok {
            for i in 0..w {
                a_film[t * w + i] = a_norm[t * w + i] * (1.0 + gamma[i]) + beta_shift[i];
            }
        }
        let q = linear(&lp.q_w.data, &lp.q_b.data, &a_film, n_tok, w, w);
        let k = linear(&lp.k_w.data, &lp.k_b.data, &a_film, n_tok, w, w);
        let v = linear(&lp.v_w.data, &lp.v_b.data, &a_film, n_tok, w, w);

        let mut probs = vec![0.0; arch.heads * n_tok * n_tok];
        let mut attn_cat = vec![0.0; n_tok * w];
        for head in 0..arch.heads {
            let off = head * hd;
            for ti in 0..n_tok {
                // Scores against all keys, then a max-shifted softmax.
                let qrow = &q[ti * w + off..ti * w + off + hd];
                let prow = &mut probs[head * n_tok * n_tok + ti * n_tok..][..n_tok];
                let mut mx = f64::NEG_INFINITY;
                for tj in 0..n_tok {
                    let krow = &k[tj * w + off..tj * w + off + hd];
                    let mut s = 0.0;
                    for c in 0..hd {
                        s += qrow[c] * krow[c];
                    }
                    let s = s * scale;
                    prow[tj] = s;
                    if s > mx {
                        mx = s;
                    }
                }
                let mut z = 0.0;
                for p in prow.iter_mut() {
                    *p = (*p - mx).exp();
                    z += *p;
                }
                for p in prow.iter_mut() {
                    *p /= z;
                }
                let out = &mut attn_cat[ti * w + off..ti * w + off + hd];
                for tj in 0..n_tok {
                    let pv = probs[head * n_tok * n_tok + ti * n_tok + tj];
                    let vrow = &v[tj * w + off..tj * w + off + hd];
                    for c in 0..hd {
                        out[c] += pv * vrow[c];
                    }
                }
            }
        }
        let attn_out = linear(&lp.o_w.data, &lp.o_b.data, &attn_cat, n_tok, w, w);
        let mut h_mid = h_in.clone();
        for (hm, a) in h_mid.iter_mut().zip(attn_out.iter()) {
            *hm += a;
        }

        let (f_norm, r2) = rmsnorm(&h_mid, &lp.norm2_gain.data, n_tok, w);
        let hh = arch.ff_hidden;
        let z = linear(&lp.ff_in_w.data, &lp.ff_in_b.data, &f_norm, n_tok, w, 2 * hh);
        let mut act = vec![0.0; n_tok * hh];
        for t in 0..n_tok {
            for i in 0..hh {
                let u = z[t * 2 * hh + i];
                let g = z[t * 2 * hh + hh + i];
                act[t * hh + i] = u * g * sigma(g);
            }
        }
        let ff_out = linear(&lp.ff_out_w.data, &lp.ff_out_b.data, &act, n_tok, hh, w);
        let mut h_out = h_mid.clone();
        for (ho, f) in h_out.iter_mut().zip(ff_out.iter()) {
            *ho += f;
        }

        layers.push(LayerCache {
            h_in,
            r1,
            a_norm,
            gamma,
            a_film,
            q,
            k,
            v,
            probs,
            attn_cat,
            h_mid,
            r2,
            f_norm,
            z,
            act,
        });
        h = h_out;
    }

    let h_final = h;
    let (fin_norm, rf) = rmsnorm(&h_final, &params.final_gain.data, n_tok, w);
    let y = linear(
        &params.head_w.data,
        &params.head_b.data,
        &fin_norm,
        n_tok,
        w,
        d,
    );

    Ok((
        y,
        Cache {
            x: x.to_vec(),
            embed_in: embed_in.to_vec(),
            e,
            layers,
            h_final,
            rf,
            fin_norm,
            n_tok,
        },
    ))
}

/// Reverse pass: accumulate parameter gradients for one sample given the
/// gradient of the loss with respect to the network output.
pub(crate) fn backward(
    params: &ModelParams,
    cache: &Cache,
    dy: &[f64],
    grads: &mut ModelParams,
) {
    let arch = &params.arch;
    let w = arch.width;
    let d = arch.input_dim;
    let hd = w / arch.heads;
    let hh = arch.ff_hidden;
    let n_tok = cache.n_tok;
    let scale = 1.0 / (hd as f64).sqrt();

    let dfin = linear_back(
        &params.head_w.data,
        &cache.fin_norm,
        dy,
        n_tok,
        w,
        d,
        &mut grads.head_w.data,
        &mut grads.head_b.data,
    );
    let mut dh = rmsnorm_back(
        &cache.h_final,
        &cache.rf,
        &params.final_gain.data,
        &dfin,
        n_tok,
        w,
        &mut grads.final_gain.data,
    );

    let mut de = vec![0.0; w];
    for (li, lp) in params.layers.iter().enumerate().rev() {
        let lc = &cache.layers[li];
        let lg = &mut grads.layers[li];

        // Feed-forward branch.
        let dact = linear_back(
            &lp.ff_out_w.data,
            &lc.act,
            &dh,
            n_tok,
            hh,
            w,
            &mut lg.ff_out_w.data,
            &mut lg.ff_out_b.data,
        );
        let mut dz = vec![0.0; n_tok * 2 * hh];
        for t in 0..n_tok {
            for i in 0..hh {
                let u = lc.z[t * 2 * hh + i];
                let g = lc.z[t * 2 * hh + hh + i];
                let s = sigma(g);
                let da = dact[t * hh + i];
                dz[t * 2 * hh + i] = da * g * s;
                dz[t * 2 * hh + hh + i] = da * u * (s + g * s * (1.0 - s));
            }
        }
        let df_norm = linear_back(
            &lp.ff_in_w.data,
            &lc.f_norm,
            &dz,
            n_tok,
            w,
            2 * hh,
            &mut lg.ff_in_w.data,
            &mut lg.ff_in_b.data,
        );
        let dh_mid_extra = rmsnorm_back(
            &lc.h_mid,
            &lc.r2,
            &lp.norm2_gain.data,
            &df_norm,
            n_tok,
            w,
            &mut lg.norm2_gain.data,
        );
        let mut dh_mid = dh; // residual passthrough
        for (a, b) in dh_mid.iter_mut().zip(dh_mid_extra.iter()) {
            *a += b;
        }

        // Attention branch.
        let dcat = linear_back(
            &lp.o_w.data,
            &lc.attn_cat,
            &dh_mid,
            n_tok,
            w,
            w,
            &mut lg.o_w.data,
            &mut lg.o_b.data,
        );
        let mut dq = vec![0.0; n_tok * w];
        let mut dk = vec![0.0; n_tok * w];
        let mut dv = vec![0.0; n_tok * w];
        for head in 0..arch.heads {
            let off = head * hd;
            for ti in 0..n_tok {
                let dout = &dcat[ti * w + off..ti * w + off + hd];
                let prow = &lc.probs[head * n_tok * n_tok + ti * n_tok..][..n_tok];
                // dP and dV.
                let mut dp = vec![0.0; n_tok];
                for tj in 0..n_tok {
                    let vrow = &lc.v[tj * w + off..tj * w + off + hd];
                    let mut s = 0.0;
                    for c in 0..hd {
                        s += dout[c] * vrow[c];
                        dv[tj * w + off + c] += prow[tj] * dout[c];
                    }
                    dp[tj] = s;
                }
                // Softmax backward: dS = P ⊙ (dP − Σ dP⊙P).
                let inner: f64 = dp.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                for tj in 0..n_tok {
                    let ds = prow[tj] * (dp[tj] - inner) * scale;
                    let krow = &lc.k[tj * w + off..tj * w + off + hd];
                    let qrow = &lc.q[ti * w + off..ti * w + off + hd];
                    for c in 0..hd {
                        dq[ti * w + off + c] += ds * krow[c];
                        dk[tj * w + off + c] += ds * qrow[c];
                    }
                }
            }
        }
        let da_q = linear_back(
            &lp.q_w.data,
            &lc.a_film,
            &dq,
            n_tok,
            w,
            w,
            &mut lg.q_w.data,
            &mut lg.q_b.data,
        );
        let da_k = linear_back(
            &lp.k_w.data,
            &lc.a_film,
            &dk,
            n_tok,
            w,
            w,
            &mut lg.k_w.data,
            &mut lg.k_b.data,
        );
        let da_v = linear_back(
            &lp.v_w.data,
            &lc.a_film,
            &dv,
            n_tok,
            w,
            w,
            &mut lg.v_w.data,
            &mut lg.v_b.data,
        );
        let mut da_film = da_q;
        for (a, (b, c)) in da_film.iter_mut().zip(da_k.iter().zip(da_v.iter())) {
            *a += b + c;
        }

        // FiLM backward: h ↦ h ⊙ (1+γ) + β with (γ, β) shared over tokens.
        let mut dgamma_vec = vec![0.0; w];
        let mut dbeta_vec = vec![0.0; w];
        let mut da_norm = vec![0.0; n_tok * w];
        for t in 0..n_tok {
            for i in 0..w {
                let g = da_film[t * w + i];
                dgamma_vec[i] += g * lc.a_norm[t * w + i];
                dbeta_vec[i] += g;
                da_norm[t * w + i] = g * (1.0 + lc.gamma[i]);
            }
        }
        let de_gamma = linear_back(
            &lp.film_gamma_w.data,
            &cache.e,
            &dgamma_vec,
            1,
            w,
            w,
            &mut lg.film_gamma_w.data,
            &mut lg.film_gamma_b.data,
        );
        let de_beta = linear_back(
            &lp.film_beta_w.data,
            &cache.e,
            &dbeta_vec,
            1,
            w,
            w,
            &mut lg.film_beta_w.data,
            &mut lg.film_beta_b.data,
        );
        for (a, (b, c)) in de.iter_mut().zip(de_gamma.iter().zip(de_beta.iter())) {
            *a += b + c;
        }

        let dh_in_extra = rmsnorm_back(
            &lc.h_in,
            &lc.r1,
            &lp.norm1_gain.data,
            &da_norm,
            n_tok,
            w,
            &mut lg.norm1_gain.data,
        );
        let mut dh_in = dh_mid; // residual passthrough
        for (a, b) in dh_in.iter_mut().zip(dh_in_extra.iter()) {
            *a += b;
        }
        dh = dh_in;
    }

    let _dx = linear_back(
        &params.input_w.data,
        &cache.x,
        &dh,
        n_tok,
        d,
        w,
        &mut grads.input_w.data,
        &mut grads.input_b.data,
    );
    let _de_in = linear_back(
        &params.embed_w.data,
        &cache.embed_in,
        &de,
        1,
        cache.embed_in.len(),
        w,
        &mut grads.embed_w.data,
        &mut grads.embed_b.data,
    );
}
