//! Train the desk-profile model on a synthetic dataset and print the
//! learning curve.
//!
//! ```sh
//! cargo run --example desk_probe [balanced|scene|aligned|narrative]
//! ```
//!
//! The optional argument routes all label signal through one
//! representation group; the run then also trains with that group
//! disabled to show the accuracy collapse.

use spom::dataset::split_dataset;
use spom::dataset::synthetic::{generate_synthetic, SignalRouting, SynthConfig};
use spom::harness::{train, TrainConfig, TrainInputs};
use spom::representation::Group;
use std::time::Instant;

fn main() {
    let routing = std::env::args().nth(1).unwrap_or_else(|| "balanced".into());
    let routing = match routing.as_str() {
        "scene" => SignalRouting::SceneOnly,
        "aligned" => SignalRouting::AlignedOnly,
        "narrative" => SignalRouting::NarrativeOnly,
        _ => SignalRouting::Balanced,
    };
    let synth = SynthConfig {
        n_episodes: 2500,
        failure_rate: 0.5,
        seed: 7,
        routing,
        ..SynthConfig::default()
    };
    let t0 = Instant::now();
    let data = generate_synthetic(&synth).expect("generate");
    println!(
        "generated {} episodes in {:.2?}",
        data.episodes.len(),
        t0.elapsed()
    );
    let split = split_dataset(&data.episodes, (2000, 250, 250), 1).expect("split");

    let config = TrainConfig::desk();
    let inputs = TrainInputs {
        episodes: &data.episodes,
        split: &split,
        provider: &data.store,
        registry: &data.registry,
    };
    let t1 = Instant::now();
    let outcome = train(&inputs, &config).expect("train");
    println!("trained {} epochs in {:.2?}", config.epochs, t1.elapsed());
    for (epoch, (loss, acc)) in outcome
        .result
        .train_loss
        .iter()
        .zip(&outcome.result.val_accuracy)
        .enumerate()
    {
        println!("epoch {epoch:>2}: train loss {loss:.4}  val accuracy {acc:.4}");
    }
    println!(
        "best epoch {}; test accuracy {:.4}",
        outcome.result.best_epoch,
        outcome.result.test.accuracy()
    );

    let disabled = match routing {
        SignalRouting::SceneOnly => Some(Group::Scene),
        SignalRouting::AlignedOnly => Some(Group::Aligned),
        SignalRouting::NarrativeOnly => Some(Group::Narrative),
        SignalRouting::Balanced => None,
    };
    if let Some(group) = disabled {
        let mut ablated = config.clone();
        ablated.enabled_groups.remove(&group);
        let outcome = train(&inputs, &ablated).expect("train ablated");
        println!(
            "without {}: test accuracy {:.4}",
            group.label(),
            outcome.result.test.accuracy()
        );
    }
}
