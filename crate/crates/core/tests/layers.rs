mod common;

use std::collections::HashMap;

use common::*;
use gtr_core::asc_graph::{build_graph, permute_graph, ScatterGraph, ALPHA_COLUMN};
use gtr_core::autodiff::{grad_check, Tape, Tensor};
use gtr_core::encodings::gne;
use gtr_core::layers::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Pair = (usize, usize);

/// Scalar-loop re-implementation of the network, keyed by `(neighbor, center)`
/// pairs rather than by the library's edge layout.
struct Naive<'a> {
    cfg: &'a ModelConfig,
    params: &'a ModelParams,
}

struct NaiveOut {
    logits: Vec<f64>,
    mpm: Vec<HashMap<Pair, f64>>,
    transformer: Vec<Vec<HashMap<Pair, f64>>>,
    nodes: Vec<Vec<f64>>,
    edges: HashMap<Pair, Vec<f64>>,
}

fn vm(x: &[f64], w: &Tensor) -> Vec<f64> {
    assert_eq!(x.len(), w.rows());
    (0..w.cols())
        .map(|c| x.iter().enumerate().map(|(r, v)| v * w.get(r, c)).sum())
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.iter().map(|x| x / s).collect()
}

fn layer_norm(x: &[f64], gamma: &Tensor, beta: &Tensor, eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(j, v)| (v - mean) / (var + eps).sqrt() * gamma.data()[j] + beta.data()[j])
        .collect()
}

impl Naive<'_> {
    fn p(&self, name: &str) -> &Tensor {
        self.params.get(name).unwrap()
    }

    fn run(&self, g: &ScatterGraph) -> NaiveOut {
        let cfg = self.cfg;
        let k = g.node_count();
        let stats = cfg.stats.as_ref().unwrap();
        let gne_block = if cfg.modules.gne {
            gne(g, cfg.gne_n).unwrap()
        } else {
            Tensor::zeros(k, cfg.gne_n)
        };
        let total_w: f64 = g.weights().iter().sum();

        let mut h: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let raw = g.centers()[i].to_array();
                let mut x: Vec<f64> = (0..7)
                    .filter(|&c| !(cfg.modules.dvm && c == ALPHA_COLUMN))
                    .map(|c| (raw[c] - stats.mean[c]) / stats.std[c])
                    .collect();
                if cfg.modules.dvm {
                    let idx = cfg.codebook.alpha_to_index(raw[ALPHA_COLUMN]).unwrap();
                    let row: Vec<f64> = self
                        .p("embed.dvm.table")
                        .row_slice(idx)
                        .iter()
                        .map(|v| v.max(0.0))
                        .collect();
                    x.extend(vm(&row, self.p("embed.dvm.adjust")));
                }
                x.extend_from_slice(gne_block.row_slice(i));
                add(&vm(&x, self.p("embed.node.weight")), self.p("embed.node.bias").data())
            })
            .collect();

        let mut e: HashMap<Pair, Vec<f64>> = HashMap::new();
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                let w = g.weight(i, j).unwrap();
                let epe = if cfg.modules.epe { w / total_w } else { 0.0 };
                let v = vm(&[w, epe], self.p("embed.edge.weight"));
                e.insert((i, j), add(&v, self.p("embed.edge.bias").data()));
            }
        }

        let edge = cfg.modules.edge_enhance;
        let mut mpm_att = Vec::new();
        for l in 0..cfg.mpm_layers {
            let pn = |s: &str| format!("mpm.{l}.{s}");
            let mut alpha = HashMap::new();
            let mut new_h = Vec::new();
            let mut new_e = e.clone();
            for j in 0..k {
                let nbrs: Vec<usize> = (0..k).filter(|&i| i != j).collect();
                let logits: Vec<f64> = nbrs
                    .iter()
                    .map(|&i| {
                        let joint = if edge {
                            cat(&[&h[i], &h[j], &e[&(i, j)]])
                        } else {
                            cat(&[&h[i], &h[j]])
                        };
                        let hid: Vec<f64> = vm(&joint, self.p(&pn("att_proj")))
                            .into_iter()
                            .map(|v| if v > 0.0 { v } else { cfg.leaky_slope * v })
                            .collect();
                        vm(&hid, self.p(&pn("att_vec")))[0]
                    })
                    .collect();
                let a = softmax(&logits);
                let mut acc = vec![0.0; cfg.d_n];
                for (&i, &aij) in nbrs.iter().zip(&a) {
                    alpha.insert((i, j), aij);
                    let msg = vm(&h[i], self.p(&pn("agg")));
                    for (t, m) in acc.iter_mut().zip(msg) {
                        *t += aij * m;
                    }
                    if edge {
                        let scaled: Vec<f64> = e[&(i, j)].iter().map(|v| aij * v).collect();
                        let upd = vm(&scaled, self.p(&pn("edge_update")));
                        new_e.insert((i, j), add(&e[&(i, j)], &upd));
                    }
                }
                new_h.push(acc);
            }
            h = new_h;
            e = new_e;
            mpm_att.push(alpha);
        }

        let mut tf_att = Vec::new();
        for l in 0..cfg.transformer_layers {
            let mut per_head = Vec::new();
            let mut node_heads = vec![Vec::new(); k];
            let mut edge_heads: HashMap<Pair, Vec<f64>> = HashMap::new();
            for head in 0..cfg.heads {
                let hp = |s: &str| self.p(&format!("transformer.{l}.head{head}.{s}"));
                let mut s_map = HashMap::new();
                for j in 0..k {
                    let nbrs: Vec<usize> = (0..k).filter(|&i| i != j).collect();
                    let mut scores = Vec::new();
                    let mut values = Vec::new();
                    let mut v_edges = Vec::new();
                    for &i in &nbrs {
                        let qn = vm(&h[j], hp("q_node"));
                        let key = vm(&h[i], hp("key"));
                        let vn = vm(&h[i], hp("v_node"));
                        let (query, value) = if edge {
                            let qe = vm(&e[&(i, j)], hp("q_edge"));
                            let ve = vm(&e[&(i, j)], hp("v_edge"));
                            v_edges.push(ve.clone());
                            (cat(&[&qn, &qe]), cat(&[&vn, &ve]))
                        } else {
                            (qn, vn)
                        };
                        let mixed = vm(&query, hp("score"));
                        let dot: f64 = mixed.iter().zip(&key).map(|(a, b)| a * b).sum();
                        scores.push(dot / (cfg.d_h as f64).sqrt());
                        values.push(vm(&value, hp("mix")));
                    }
                    let s = softmax(&scores);
                    let mut acc = vec![0.0; cfg.d_h];
                    for (n, &i) in nbrs.iter().enumerate() {
                        s_map.insert((i, j), s[n]);
                        for (t, v) in acc.iter_mut().zip(&values[n]) {
                            *t += s[n] * v;
                        }
                        if edge {
                            let scaled: Vec<f64> = v_edges[n].iter().map(|v| s[n] * v).collect();
                            edge_heads.entry((i, j)).or_default().extend(scaled);
                        }
                    }
                    node_heads[j].extend(acc);
                }
                per_head.push(s_map);
            }
            let tp = |s: &str| self.p(&format!("transformer.{l}.{s}"));
            h = (0..k)
                .map(|j| {
                    let res = add(&h[j], &vm(&node_heads[j], tp("node_out")));
                    layer_norm(&res, tp("node_norm.gamma"), tp("node_norm.beta"), cfg.layer_norm_eps)
                })
                .collect();
            if edge {
                e = e
                    .iter()
                    .map(|(&pair, ev)| {
                        let res = add(ev, &vm(&edge_heads[&pair], tp("edge_out")));
                        let out = layer_norm(
                            &res,
                            tp("edge_norm.gamma"),
                            tp("edge_norm.beta"),
                            cfg.layer_norm_eps,
                        );
                        (pair, out)
                    })
                    .collect();
            }
            tf_att.push(per_head);
        }

        let mut pooled = vec![0.0; cfg.d_n];
        for row in &h {
            for (p, v) in pooled.iter_mut().zip(row) {
                *p += v / k as f64;
            }
        }
        let logits = add(&vm(&pooled, self.p("classifier.weight")), self.p("classifier.bias").data());
        NaiveOut {
            logits,
            mpm: mpm_att,
            transformer: tf_att,
            nodes: h,
            edges: e,
        }
    }
}

fn all_ablations() -> Vec<AblationFlags> {
    let one = |i: usize| AblationFlags {
        disable_dvm: i == 0,
        disable_edge_enhance: i == 1,
        disable_gne: i == 2,
        disable_epe: i == 3,
    };
    let mut v = vec![AblationFlags::default()];
    v.extend((0..4).map(one));
    v.push(AblationFlags {
        disable_dvm: true,
        disable_edge_enhance: true,
        disable_gne: true,
        disable_epe: true,
    });
    v
}

#[test]
fn forward_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (n, flags) in all_ablations().into_iter().enumerate() {
        for &k in &[2usize, 3, 5, 9] {
            let centers = random_centers(&mut rng, k);
            let cfg = ablate(&with_stats(compact_config(), &centers), flags);
            let params = init_params(&cfg, n as u64 * 31 + k as u64).unwrap();
            let g = build_graph(&centers, cfg.sigma_d).unwrap();
            let inputs = GraphInputs::prepare(&g, &cfg).unwrap();

            let mut tape = Tape::new();
            let vars = tape.params_from(&params);
            let trace = model_forward(&mut tape, &inputs, &vars, &cfg).unwrap();
            let oracle = Naive { cfg: &cfg, params: &params }.run(&g);

            let got = tape.value(trace.logits).data();
            for (a, b) in got.iter().zip(&oracle.logits) {
                assert!((a - b).abs() < 1e-12, "{flags:?} K={k}: {a} vs {b}");
            }
            let layout = &inputs.layout;
            let pair = |e: usize| (layout.sources[e], layout.targets[e]);
            for (l, alpha) in trace.mpm_attention.iter().enumerate() {
                for (e, v) in tape.value(*alpha).data().iter().enumerate() {
                    assert!((v - oracle.mpm[l][&pair(e)]).abs() < 1e-12);
                }
            }
            for (l, heads) in trace.transformer_attention.iter().enumerate() {
                for (hd, s) in heads.iter().enumerate() {
                    for (e, v) in tape.value(*s).data().iter().enumerate() {
                        assert!((v - oracle.transformer[l][hd][&pair(e)]).abs() < 1e-12);
                    }
                }
            }
            let last = trace.layer_outputs.last().unwrap();
            let nodes = tape.value(last.nodes);
            for (i, row) in oracle.nodes.iter().enumerate() {
                for (a, b) in nodes.row_slice(i).iter().zip(row) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            let edges = tape.value(last.edges);
            for e in 0..layout.len() {
                for (a, b) in edges.row_slice(e).iter().zip(&oracle.edges[&pair(e)]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn dvm_embed_rows_and_gradients() {
    let mut tape = Tape::new();
    let table = tape.param(
        "t",
        Tensor::from_rows(&[
            vec![1.0, -2.0],
            vec![0.5, 0.5],
            vec![-1.0, 3.0],
            vec![2.0, 2.0],
        ])
        .unwrap(),
    );
    let adjust = tape.param("a", Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 2.0]]).unwrap());
    let out = dvm_embed(&mut tape, &[2, 0, 2], table, adjust).unwrap();
    let v = tape.value(out).clone();
    assert_eq!(v.row_slice(0), v.row_slice(2));
    // relu([1,-2]) = [1,0] -> [1,0]; relu([-1,3]) = [0,3] -> [3,6]
    assert_eq!(v.row_slice(1), &[1.0, 0.0]);
    assert_eq!(v.row_slice(0), &[3.0, 6.0]);
    let loss = tape.sum(out).unwrap();
    let grads = tape.backward(loss).unwrap();
    let gt = grads.get(table).unwrap();
    assert!(gt.row_slice(1).iter().chain(gt.row_slice(3)).all(|g| *g == 0.0));
    assert!(gt.row_slice(2).iter().any(|g| *g != 0.0));

    let mut tape = Tape::new();
    let table = tape.param("t", Tensor::filled(3, 2, 0.7));
    let zero = tape.param("a", Tensor::zeros(2, 4));
    let out = dvm_embed(&mut tape, &[0, 1, 2], table, zero).unwrap();
    assert!(tape.value(out).data().iter().all(|v| *v == 0.0));
}

fn single_graph(k: usize, seed: u64) -> (ModelConfig, ModelParams, GraphInputs) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = random_centers(&mut rng, k);
    let cfg = with_stats(compact_config(), &centers);
    let params = init_params(&cfg, seed).unwrap();
    let inputs = GraphInputs::from_centers(&centers, &cfg).unwrap();
    (cfg, params, inputs)
}

#[test]
fn mpm_zero_edge_update_keeps_edges() {
    let (cfg, mut params, inputs) = single_graph(5, 2);
    *params.get_mut("mpm.0.edge_update").unwrap() = Tensor::zeros(cfg.d_e, cfg.d_e);
    let mut tape = Tape::new();
    let vars = tape.params_from(&params);
    let (h, e) = init_embeddings(&mut tape, &inputs, &vars, &cfg).unwrap();
    let (out, _) = mpm_layer(&mut tape, h, e, &inputs, &vars, 0, &cfg).unwrap();
    assert_eq!(tape.value(out.edges), tape.value(e));
}

#[test]
fn two_node_attention_is_trivial() {
    let (cfg, params, inputs) = single_graph(2, 4);
    let mut tape = Tape::new();
    let vars = tape.params_from(&params);
    let trace = model_forward(&mut tape, &inputs, &vars, &cfg).unwrap();
    assert_eq!(tape.value(trace.mpm_attention[0]).data(), &[1.0, 1.0]);
    for heads in &trace.transformer_attention {
        for s in heads {
            assert_eq!(tape.value(*s).data(), &[1.0, 1.0]);
        }
    }
    let single_head = ModelConfig { heads: 1, ..cfg };
    let params = init_params(&single_head, 4).unwrap();
    let mut tape = Tape::new();
    let vars = tape.params_from(&params);
    let trace = model_forward(&mut tape, &inputs, &vars, &single_head).unwrap();
    assert_eq!(trace.transformer_attention[0].len(), 1);
}

#[test]
fn attention_sums_to_one() {
    for k in [3, 6, 12] {
        let (cfg, params, inputs) = single_graph(k, k as u64);
        let mut tape = Tape::new();
        let vars = tape.params_from(&params);
        let trace = model_forward(&mut tape, &inputs, &vars, &cfg).unwrap();
        let all = trace
            .mpm_attention
            .iter()
            .chain(trace.transformer_attention.iter().flatten());
        for a in all {
            let v = tape.value(*a).data();
            for s in 0..k {
                let total: f64 = inputs.layout.by_center.members(s).iter().map(|&e| v[e]).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn readout_is_column_mean() {
    let mut tape = Tape::new();
    let h = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let r = readout(&mut tape, h).unwrap();
    assert_eq!(tape.value(r).data(), &[2.0, 3.0]);
    let h = tape.constant(Tensor::row(vec![5.0, -1.0]));
    let r = readout(&mut tape, h).unwrap();
    assert_eq!(tape.value(r).data(), &[5.0, -1.0]);
}

#[test]
fn zero_classifier_gives_equal_logits() {
    let (cfg, mut params, inputs) = single_graph(6, 9);
    *params.get_mut("classifier.weight").unwrap() = Tensor::zeros(cfg.d_n, cfg.class_count);
    let z = logits(&inputs, &cfg, &params).unwrap();
    assert!(z.iter().all(|v| *v == 0.0));
    let (loss, _) = loss_and_grads(&inputs, 0, &cfg, &params).unwrap();
    assert!((loss - (cfg.class_count as f64).ln()).abs() < 1e-12);
}

#[test]
fn disabled_encodings_are_zero_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let centers = random_centers(&mut rng, 6);
    let cfg = with_stats(compact_config(), &centers);
    let no_gne = ablate(&cfg, AblationFlags { disable_gne: true, ..Default::default() });
    let inputs = GraphInputs::from_centers(&centers, &no_gne).unwrap();
    assert!(inputs.gne.data().iter().all(|v| *v == 0.0));
    let no_epe = ablate(&cfg, AblationFlags { disable_epe: true, ..Default::default() });
    let inputs = GraphInputs::from_centers(&centers, &no_epe).unwrap();
    assert!((0..inputs.layout.len()).all(|e| inputs.edge_features.get(e, 1) == 0.0));
    assert!((0..inputs.layout.len()).all(|e| inputs.edge_features.get(e, 0) > 0.0));
    let no_dvm = ablate(&cfg, AblationFlags { disable_dvm: true, ..Default::default() });
    let inputs = GraphInputs::from_centers(&centers, &no_dvm).unwrap();
    assert_eq!(inputs.continuous.cols(), 7);
}

#[test]
fn full_loss_passes_gradient_check() {
    for flags in all_ablations() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let centers = random_centers(&mut rng, 5);
        let cfg = ablate(&with_stats(compact_config(), &centers), flags);
        let params = init_params(&cfg, 21).unwrap();
        let inputs = GraphInputs::from_centers(&centers, &cfg).unwrap();
        let report = grad_check(
            |tape, vars| {
                let trace = model_forward(tape, &inputs, vars, &cfg)?;
                tape.cross_entropy(trace.logits, 2)
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{flags:?}: {:?}", report.worst());
        assert_eq!(report.entries_checked(), params.scalar_count());
    }
}

#[test]
fn one_parameter_set_handles_every_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let graphs: Vec<_> = (2..=40).map(|k| random_centers(&mut rng, k)).collect();
    let all: Vec<_> = graphs.iter().flatten().cloned().collect();
    let cfg = with_stats(compact_config(), &all);
    let params = init_params(&cfg, 1).unwrap();
    for centers in &graphs {
        let inputs = GraphInputs::from_centers(centers, &cfg).unwrap();
        let (loss, grads) = loss_and_grads(&inputs, 1, &cfg, &params).unwrap();
        assert!(loss.is_finite());
        assert!(grads.iter().all(|(_, g)| g.all_finite()));
    }
}

#[test]
fn label_out_of_range_rejected() {
    let (cfg, params, inputs) = single_graph(3, 0);
    assert!(loss_and_grads(&inputs, 3, &cfg, &params).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn logits_are_permutation_invariant(seed in any::<u64>(), k in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = random_centers(&mut rng, k);
        let cfg = with_stats(compact_config(), &centers);
        let params = init_params(&cfg, seed).unwrap();
        let g = build_graph(&centers, cfg.sigma_d).unwrap();
        let base = logits(&GraphInputs::prepare(&g, &cfg).unwrap(), &cfg, &params).unwrap();
        let perm = random_permutation(&mut rng, k);
        let pg = permute_graph(&g, &perm).unwrap();
        let permuted = logits(&GraphInputs::prepare(&pg, &cfg).unwrap(), &cfg, &params).unwrap();
        for (a, b) in base.iter().zip(&permuted) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
