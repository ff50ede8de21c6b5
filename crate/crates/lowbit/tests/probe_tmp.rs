//! Throwaway probe: per-input generated-length deviation for saved students.

use lowbit::cli::load_checkpoint;
use lowbit::cli::train::held_out_task;
use lowbit::tasks::generate;

#[test]
#[ignore]
fn per_input_length_deviations() {
    for path in [
        "/tmp/probe_s428_both/student.ckpt",
        "/tmp/probe_s428_baseline/student.ckpt",
        "/tmp/probe_sr28_both/student.ckpt",
        "/tmp/probe_sr28_baseline/student.ckpt",
    ] {
        let (cfg, model) = load_checkpoint(std::path::Path::new(path)).unwrap();
        let pairs = generate(&held_out_task(&cfg.task), 256);
        let cap = cfg.model.max_seq_len - 2;
        let mut far = 0usize;
        let mut capped = 0usize;
        let mut hist = [0usize; 8];
        for p in &pairs {
            let out = model.greedy_decode(&p.src, cap);
            let dev = (out.len() as f64 - p.tgt.len() as f64) / p.tgt.len() as f64;
            if dev.abs() > 0.40 {
                far += 1;
            }
            if out.len() >= cap {
                capped += 1;
            }
            let bin = ((dev.abs() / 0.2) as usize).min(7);
            hist[bin] += 1;
        }
        println!(
            "{path}: far(>40%)={:.3} capped={:.3} (|dev| histogram by 20% bins: {:?})",
            far as f64 / 256.0,
            capped as f64 / 256.0,
            hist
        );
    }
}
