// scratch probes for acceptance-suite calibration (not part of the deliverable API surface)
use covad_core::amp::*;
use covad_core::detectors::*;
use covad_core::metrics::*;
use covad_core::system_model::*;
use covad_core::ura::*;
use std::time::Instant;

fn ura_frame_probe() {
    let spec = TreeCodeSpec::rate_quarter_b96(1);
    let ka = 50;
    let m = 100;
    let ebn0_db = 0.0;
    let sigma2 = ebn0_to_sigma2(&spec, 100, ebn0_db);
    let mut opts = DetectorOptions::defaults_large(sigma2);
    opts.max_epochs = 10;
    opts.tolerance = 1e-3;

    let t0 = Instant::now();
    let mut pe_sum = 0.0;
    let frames = 5;
    for f in 0..frames {
        let codebook = generate_pilots(100, 4096, split_seed(1000, f)).unwrap();
        let out = ura_end_to_end(
            &spec, &codebook, ka, m, ebn0_db,
            &SlotSelection::Threshold(vec![0.5]),
            &opts, split_seed(2000, f),
        ).unwrap();
        pe_sum += out.p_md + out.p_fa;
        println!("frame {f}: p_md {:.3} p_fa {:.3} decoded {} paths {}", out.p_md, out.p_fa, out.decoded_count, out.max_surviving_paths);
    }
    println!("URA: mean Pe {:.4}, {:.1} s/frame", pe_sum / frames as f64, t0.elapsed().as_secs_f64() / frames as f64);
}

fn sqrt_m_probe() {
    // L=50, Ktot=500, Ka=100, snr uniform 0-20 dB, M in {100, 400, 1600}
    let (l, ktot, ka) = (50usize, 500usize, 100usize);
    let model = LsfcModel::uniform_db(0.0, 20.0);
    let t0 = Instant::now();
    for m in [100usize, 400, 1600] {
        let mut e_nnls = 0.0;
        let mut e_ml = 0.0;
        let trials = 4;
        for t in 0..trials {
            let pilots = generate_pilots(l, ktot, split_seed(3000 + m as u64, t)).unwrap();
            let truth = sample_ground_truth(ktot, ka, &model, split_seed(4000 + m as u64, t)).unwrap();
            let block = synthesize_block(&pilots, &truth, m, 1.0, split_seed(5000 + m as u64, t)).unwrap();
            let cov = sample_covariance(&block);
            let mut opts = DetectorOptions::defaults_large(1.0);
            opts.max_epochs = 60;
            opts.tolerance = 1e-6;
            let nn = run_detector(&pilots, &cov, 1.0, &opts, Algorithm::Nnls).unwrap();
            let ml = run_detector(&pilots, &cov, 1.0, &opts, Algorithm::Ml).unwrap();
            e_nnls += lp_error(&nn.gamma_hat, &truth.gamma_true, LpNorm::L1).unwrap();
            e_ml += lp_error(&ml.gamma_hat, &truth.gamma_true, LpNorm::L1).unwrap();
        }
        e_nnls /= trials as f64;
        e_ml /= trials as f64;
        println!("M {m:>5}: nnls {:.4} (x sqrtM {:.3}) ml {:.4} (x sqrtM {:.3})",
            e_nnls, e_nnls * (m as f64).sqrt(), e_ml, e_ml * (m as f64).sqrt());
    }
    println!("sqrtM probe: {:.1} s", t0.elapsed().as_secs_f64());
}

fn support_error_probe() {
    // L=50, Ktot=500, Ka=150, snr 0 dB: ML vs AMP equal-error rates over M
    let (l, ktot, ka) = (50usize, 500usize, 150usize);
    let t0 = Instant::now();
    let grid = default_nu_grid();
    for m in [100usize, 200, 400] {
        let trials = 8;
        let mut rocs_ml = Vec::new();
        let mut rocs_amp = Vec::new();
        for t in 0..trials {
            let pilots = generate_pilots(l, ktot, split_seed(6000 + m as u64, t)).unwrap();
            let truth = sample_ground_truth(ktot, ka, &LsfcModel::Constant(1.0), split_seed(7000 + m as u64, t)).unwrap();
            let (block, _x) = synthesize_block_detailed(&pilots, &truth, m, 1.0, split_seed(8000 + m as u64, t)).unwrap();
            let cov = sample_covariance(&block);
            let mut opts = DetectorOptions::defaults_large(1.0);
            opts.max_epochs = 60;
            opts.tolerance = 1e-6;
            opts.box_upper = Some(truth.lsfc.clone());
            let ml = run_detector(&pilots, &cov, 1.0, &opts, Algorithm::Ml).unwrap();
            rocs_ml.push(roc_sweep(&ml.gamma_hat, &truth.active_set, 1.0, &grid).unwrap());

            let aopts = AmpOptions {
                max_iters: 50,
                derivative_mode: DerivativeMode::DiagonalOnly,
                ..AmpOptions::defaults(ka as f64 / ktot as f64, LsfcKnowledge::Constant(1.0))
            };
            let run = amp_run(&block, &pilots, &aopts, None).unwrap();
            let g = amp_estimate_gamma(&run.x_final, &run.z_final, &pilots, &run.tau2_final);
            rocs_amp.push(roc_sweep(&g, &truth.active_set, 1.0, &grid).unwrap());
        }
        let ml_eep = equal_error_point(&average_roc(&rocs_ml));
        let amp_eep = equal_error_point(&average_roc(&rocs_amp));
        println!("M {m:>4}: ML eep {:.5} (crossed {}), AMP eep {:.5} (crossed {})",
            ml_eep.rate, ml_eep.crossed, amp_eep.rate, amp_eep.crossed);
    }
    println!("support probe: {:.1} s", t0.elapsed().as_secs_f64());
}

fn amp_stability_probe() {
    // L=100, Ktot=2000, Ka=20, snr uniform 0-20 dB known, M in {4, 10}
    let (l, ktot, ka) = (100usize, 2000usize, 20usize);
    let model = LsfcModel::uniform_db(0.0, 20.0);
    let t0 = Instant::now();
    for m in [4usize, 10] {
        let mut exceed = 0;
        for s in 0..10u64 {
            let pilots = generate_pilots(l, ktot, split_seed(9000 + m as u64, s)).unwrap();
            let truth = sample_ground_truth(ktot, ka, &model, split_seed(9100 + m as u64, s)).unwrap();
            let (block, x) = synthesize_block_detailed(&pilots, &truth, m, 1.0, split_seed(9200 + m as u64, s)).unwrap();
            let opts = AmpOptions {
                max_iters: 30,
                tau_mode: TauMode::StateEvolution,
                early_stop_tol: 0.0,
                se_seed: 77,
                ..AmpOptions::defaults(ka as f64 / ktot as f64, LsfcKnowledge::Known(truth.lsfc.clone()))
            };
            let run = amp_run(&block, &pilots, &opts, Some(&x)).unwrap();
            // SE prediction of per-entry MSE: (tau2_{t+1} - sigma2eff) * (L/Ktot)
            let cfg = SeConfig {
                lambda: ka as f64 / ktot as f64,
                undersampling: ktot as f64 / l as f64,
                sigma2: 1.0 / l as f64,
                m,
                iters: run.iterations,
                mc_samples: 20_000,
                seed: 77,
            };
            let taus = state_evolution(&cfg, &model);
            let mse = run.mse_trace.as_ref().unwrap();
            let last = *mse.last().unwrap_or(&f64::INFINITY);
            let se_pred = (taus[run.iterations] - cfg.sigma2) * (l as f64 / ktot as f64);
            let ratio = if last.is_finite() { last / se_pred } else { f64::INFINITY };
            let diverged = run.divergence.is_some() || ratio > 3.0;
            if diverged { exceed += 1; }
            println!("  M={m} seed {s}: iters {} mse {last:.3e} se {se_pred:.3e} ratio {ratio:.2} div@{:?}", run.iterations, run.divergence);
        }
        println!("M={m}: {exceed}/10 exceed 3x SE");
    }
    println!("amp stability probe: {:.1} s", t0.elapsed().as_secs_f64());
}

fn phase_transition_probe() {
    // noiseless true-covariance NNLS boundary Ka*(L) for Ktot=200
    let ktot: usize = std::env::args().nth(2).map(|v| v.parse().unwrap()).unwrap_or(200);
    let t0 = Instant::now();
    for l in [8usize, 10, 12, 16, 20] {
        let mut ka_majority = 0;
        let mut ka_uniform = 0;
        let mut uniform_alive = true;
        'ka: for ka in 1..=60usize {
            let trials = 8;
            let mut success = 0;
            for t in 0..trials {
                let pilots = generate_pilots(l, ktot, split_seed(11_000 + l as u64 * 100, (ka * 10 + t) as u64)).unwrap();
                let truth = sample_ground_truth(ktot, ka, &LsfcModel::Constant(1.0), split_seed(12_000 + l as u64 * 100, (ka * 10 + t) as u64)).unwrap();
                let cov = true_covariance(&pilots, &truth.gamma_true, 0.0).unwrap();
                let mut opts = DetectorOptions::defaults(0.0);
                opts.max_epochs = 1500;
                opts.tolerance = 1e-10;
                let est = run_detector(&pilots, &cov, 0.0, &opts, Algorithm::Nnls).unwrap();
                let err = lp_error(&est.gamma_hat, &truth.gamma_true, LpNorm::L1).unwrap();
                if err < 1e-3 { success += 1; }
            }
            if uniform_alive && success == trials { ka_uniform = ka; } else { uniform_alive = false; }
            if success * 2 >= trials { ka_majority = ka; } else { break 'ka; }
        }
        println!("L={l:>2}: Ka*_uniform = {ka_uniform}  Ka*_majority = {ka_majority}");
    }
    println!("phase transition probe: {:.1} s", t0.elapsed().as_secs_f64());
}


fn amp_matrix_probe() {
    let (l, ktot, ka) = (100usize, 2000usize, 20usize);
    let model = LsfcModel::uniform_db(0.0, 20.0);
    for m in [4usize, 10] {
        for (tname, tmode) in [("se", TauMode::StateEvolution), ("emp", TauMode::EmpiricalResidual)] {
            for (dname, dmode) in [("full", DerivativeMode::Full), ("diag", DerivativeMode::DiagonalOnly)] {
                let mut exceed = 0;
                for s in 0..10u64 {
                    let pilots = generate_pilots(l, ktot, split_seed(9000 + m as u64, s)).unwrap();
                    let truth = sample_ground_truth(ktot, ka, &model, split_seed(9100 + m as u64, s)).unwrap();
                    let (block, x) = synthesize_block_detailed(&pilots, &truth, m, 1.0, split_seed(9200 + m as u64, s)).unwrap();
                    let opts = AmpOptions {
                        max_iters: 30,
                        tau_mode: tmode,
                        derivative_mode: dmode,
                        early_stop_tol: 0.0,
                        se_seed: 77,
                        ..AmpOptions::defaults(ka as f64 / ktot as f64, LsfcKnowledge::Known(truth.lsfc.clone()))
                    };
                    let run = amp_run(&block, &pilots, &opts, Some(&x)).unwrap();
                    let cfg = SeConfig {
                        lambda: ka as f64 / ktot as f64,
                        undersampling: ktot as f64 / l as f64,
                        sigma2: 1.0 / l as f64,
                        m,
                        iters: run.iterations,
                        mc_samples: 20_000,
                        seed: 77,
                    };
                    let taus = state_evolution(&cfg, &model);
                    let mse = run.mse_trace.as_ref().unwrap();
                    let last = *mse.last().unwrap_or(&f64::INFINITY);
                    let se_pred = (taus[run.iterations] - cfg.sigma2) * (l as f64 / ktot as f64);
                    let ratio = if last.is_finite() { last / se_pred } else { f64::INFINITY };
                    if run.divergence.is_some() || ratio > 3.0 { exceed += 1; }
                }
                println!("M={m:>2} tau={tname:<3} deriv={dname:<4}: {exceed}/10 exceed 3x SE");
            }
        }
    }
}


fn amp_earlystop_probe() {
    let (l, ktot, ka) = (100usize, 2000usize, 20usize);
    let model = LsfcModel::uniform_db(0.0, 20.0);
    for m in [4usize, 10] {
        let mut exceed = 0;
        let n_seeds = 30u64;
        for s in 0..n_seeds {
            let pilots = generate_pilots(l, ktot, split_seed(9000 + m as u64, s)).unwrap();
            let truth = sample_ground_truth(ktot, ka, &model, split_seed(9100 + m as u64, s)).unwrap();
            let (block, x) = synthesize_block_detailed(&pilots, &truth, m, 1.0, split_seed(9200 + m as u64, s)).unwrap();
            let opts = AmpOptions {
                max_iters: 50,
                tau_mode: TauMode::EmpiricalResidual,
                derivative_mode: DerivativeMode::Full,
                early_stop_tol: 1e-6,
                se_seed: 77,
                ..AmpOptions::defaults(ka as f64 / ktot as f64, LsfcKnowledge::Known(truth.lsfc.clone()))
            };
            let run = amp_run(&block, &pilots, &opts, Some(&x)).unwrap();
            let cfg = SeConfig {
                lambda: ka as f64 / ktot as f64,
                undersampling: ktot as f64 / l as f64,
                sigma2: 1.0 / l as f64,
                m,
                iters: run.iterations,
                mc_samples: 20_000,
                seed: 77,
            };
            let taus = state_evolution(&cfg, &model);
            let mse = run.mse_trace.as_ref().unwrap();
            let last = *mse.last().unwrap_or(&f64::INFINITY);
            let se_pred = (taus[run.iterations] - cfg.sigma2) * (l as f64 / ktot as f64);
            let ratio = if last.is_finite() { last / se_pred } else { f64::INFINITY };
            let bad = run.divergence.is_some() || ratio > 3.0;
            if bad { exceed += 1; }
            if bad || s < 12 {
                println!("  M={m} seed {s}: iters {} ratio {ratio:.2} div@{:?}", run.iterations, run.divergence);
            }
        }
        println!("M={m}: {exceed}/{n_seeds} exceed 3x SE (empirical tau, full deriv, early stop)");
    }
}


fn amp_trace_probe() {
    let (l, ktot, ka) = (100usize, 2000usize, 20usize);
    let model = LsfcModel::uniform_db(0.0, 20.0);
    let m: usize = std::env::args().nth(2).map(|v| v.parse().unwrap()).unwrap_or(4);
    for s in [7u64, 1, 3, 0] {
        let pilots = generate_pilots(l, ktot, split_seed(9000 + m as u64, s)).unwrap();
        let truth = sample_ground_truth(ktot, ka, &model, split_seed(9100 + m as u64, s)).unwrap();
        let (block, x) = synthesize_block_detailed(&pilots, &truth, m, 1.0, split_seed(9200 + m as u64, s)).unwrap();
        let opts = AmpOptions {
            max_iters: 50,
            tau_mode: TauMode::EmpiricalResidual,
            derivative_mode: DerivativeMode::Full,
            early_stop_tol: 1e-6,
            se_seed: 77,
            ..AmpOptions::defaults(ka as f64 / ktot as f64, LsfcKnowledge::Known(truth.lsfc.clone()))
        };
        let run = amp_run(&block, &pilots, &opts, Some(&x)).unwrap();
        let mse = run.mse_trace.as_ref().unwrap();
        println!("seed {s}: iters {}", run.iterations);
        for (t, (e, tv)) in mse.iter().zip(run.tau2_trace.iter()).enumerate() {
            let tmean = tv.iter().sum::<f64>() / tv.len() as f64;
            println!("  t {t:>2} mse {e:.4e} tau_mean {tmean:.4e}");
        }
    }
}


fn amp_onsager_probe() {
    let (l, ktot, ka) = (100usize, 2000usize, 20usize);
    let model = LsfcModel::uniform_db(0.0, 20.0);
    for (fname, form) in [("holo", OnsagerForm::Holo), ("holoT", OnsagerForm::HoloT),
                          ("conj", OnsagerForm::Conj), ("conjT", OnsagerForm::ConjT)] {
        for m in [4usize, 10] {
            let mut exceed = 0;
            let n = 30u64;
            for s in 0..n {
                let pilots = generate_pilots(l, ktot, split_seed(9000 + m as u64, s)).unwrap();
                let truth = sample_ground_truth(ktot, ka, &model, split_seed(9100 + m as u64, s)).unwrap();
                let (block, x) = synthesize_block_detailed(&pilots, &truth, m, 1.0, split_seed(9200 + m as u64, s)).unwrap();
                let opts = AmpOptions {
                    max_iters: 50,
                    tau_mode: TauMode::EmpiricalResidual,
                    derivative_mode: DerivativeMode::Full,
                    early_stop_tol: 1e-6,
                    onsager: form,
                    ..AmpOptions::defaults(ka as f64 / ktot as f64, LsfcKnowledge::Known(truth.lsfc.clone()))
                };
                let run = amp_run(&block, &pilots, &opts, Some(&x)).unwrap();
                let cfg = SeConfig {
                    lambda: ka as f64 / ktot as f64,
                    undersampling: ktot as f64 / l as f64,
                    sigma2: 1.0 / l as f64,
                    m, iters: run.iterations, mc_samples: 20_000, seed: 77,
                };
                let taus = state_evolution(&cfg, &model);
                let mse = run.mse_trace.as_ref().unwrap();
                let last = *mse.last().unwrap_or(&f64::INFINITY);
                let se_pred = (taus[run.iterations] - cfg.sigma2) * (l as f64 / ktot as f64);
                let ratio = if last.is_finite() { last / se_pred } else { f64::INFINITY };
                if run.divergence.is_some() || ratio > 3.0 { exceed += 1; }
            }
            println!("onsager {fname:<5} M={m:>2}: {exceed}/{n} exceed 3x SE");
        }
    }
}


fn amp_config_probe() {
    let (l, ktot, ka) = (100usize, 2000usize, 20usize);
    let model = LsfcModel::uniform_db(0.0, 20.0);
    for (dname, dmode) in [("full", DerivativeMode::Full), ("diag", DerivativeMode::DiagonalOnly)] {
        for es in [1e-6f64] {
            for m in [4usize, 10] {
                let mut exceed = 0;
                let n = 30u64;
                for s in 0..n {
                    let pilots = generate_pilots(l, ktot, split_seed(9000 + m as u64, s)).unwrap();
                    let truth = sample_ground_truth(ktot, ka, &model, split_seed(9100 + m as u64, s)).unwrap();
                    let (block, x) = synthesize_block_detailed(&pilots, &truth, m, 1.0, split_seed(9200 + m as u64, s)).unwrap();
                    let opts = AmpOptions {
                        max_iters: 50,
                        tau_mode: TauMode::EmpiricalIsotropic,
                        derivative_mode: dmode,
                        early_stop_tol: es,
                        onsager: OnsagerForm::Holo,
                        ..AmpOptions::defaults(ka as f64 / ktot as f64, LsfcKnowledge::Known(truth.lsfc.clone()))
                    };
                    let run = amp_run(&block, &pilots, &opts, Some(&x)).unwrap();
                    let cfg = SeConfig {
                        lambda: ka as f64 / ktot as f64,
                        undersampling: ktot as f64 / l as f64,
                        sigma2: 1.0 / l as f64,
                        m, iters: run.iterations, mc_samples: 20_000, seed: 77,
                    };
                    let taus = state_evolution(&cfg, &model);
                    let mse = run.mse_trace.as_ref().unwrap();
                    let last = *mse.last().unwrap_or(&f64::INFINITY);
                    let se_pred = (taus[run.iterations] - cfg.sigma2) * (l as f64 / ktot as f64);
                    let ratio = if last.is_finite() { last / se_pred } else { f64::INFINITY };
                    if run.divergence.is_some() || ratio > 3.0 { exceed += 1; }
                }
                println!("deriv={dname:<4} es={es:.0e} M={m:>2}: {exceed}/{n}");
            }
        }
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        "ura" => ura_frame_probe(),
        "sqrtm" => sqrt_m_probe(),
        "support" => support_error_probe(),
        "amp" => amp_stability_probe(),
        "ampmat" => amp_matrix_probe(),
        "ampes" => amp_earlystop_probe(),
        "amptrace" => amp_trace_probe(),
        "onsager" => amp_onsager_probe(),
        "ampcfg" => amp_config_probe(),
        "pt" => phase_transition_probe(),
        _ => { eprintln!("usage: probe [ura|sqrtm|support|amp|pt]"); }
    }
}
