//! Prints per-epoch old/new accuracy for the baseline and the full method
//! on one synthetic dataset. Usage:
//! `forgetting_probe <separation> <noise> <seed> [epochs] [aug] [beta]`
use gcdlab::synthdata::{generate_dataset, SynthSpec};
use gcdlab::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (sep, noise, seed) = (arg(1, 3.0), arg(2, 1.0), arg(3, 0.0) as u64);
    let epochs = arg(4, 100.0) as usize;
    let aug = arg(5, 0.1);
    let beta = arg(6, 2.0);
    let ds = generate_dataset(&SynthSpec {
        n_known: 10,
        n_novel: 10,
        per_class: 60,
        dim: 20,
        separation: sep,
        noise,
        labeled_ratio: 0.5,
        seed,
    })?;
    let base = TrainConfig {
        epochs,
        seed,
        aug_strength: aug,
        ..TrainConfig::default()
    };
    let t = std::time::Instant::now();
    let a = train(&ds, &base.clone().simgcd())?;
    let el = t.elapsed();
    let b = train(&ds, &TrainConfig { beta, ..base })?;
    println!("baseline run took {el:?}");
    if std::env::var("SUMMARY").is_ok() {
        let peak = a.history.iter().map(|m| m.acc_old).fold(0.0, f64::max);
        let (fa, fb) = (a.history.last().unwrap(), b.history.last().unwrap());
        println!("sep {sep} noise {noise} seed {seed} aug {aug} beta {beta}: base peak {peak:.3} final old {:.3} new {:.3} kc {} | lego old {:.3} new {:.3} kc {}",
            fa.acc_old, fa.acc_new, fa.known_count, fb.acc_old, fb.acc_new, fb.known_count);
        return Ok(());
    }
    for (x, y) in a.history.iter().zip(&b.history) {
        if x.epoch % 5 == 0 || x.epoch == 1 {
            println!("{:3} base old {:.3} new {:.3} kc {:4} | lego old {:.3} new {:.3} kc {:4} ler {:.3}",
                x.epoch, x.acc_old, x.acc_new, x.known_count, y.acc_old, y.acc_new, y.known_count, y.loss.ler);
        }
    }
    Ok(())
}
