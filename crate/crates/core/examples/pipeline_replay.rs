//! The command pipeline as a library: simulate, EM and back-projection into a
//! temporary directory, then replay each manifest into a second directory and
//! confirm the outputs are byte-identical.

use compton_imager::pipeline::{execute, replay, Command, PipelineConfig, EVENTS_FILE};

fn main() -> compton_imager::Result<()> {
    let root = std::env::temp_dir().join("compton-pipeline-example");
    let config = PipelineConfig {
        seed: Some(2024),
        n_events: 300,
        output_dir: root.join("run"),
        ..PipelineConfig::default()
    };
    let events = config.output_dir.join(EVENTS_FILE);
    let commands = [
        Command::Simulate,
        Command::Em { events: events.clone() },
        Command::Backproject { events },
    ];
    for command in &commands {
        let manifest = execute(command, &config)?;
        println!("{} (seed {}, config {})", command.label(), manifest.seed, &manifest.config_hash[..12]);
        for o in &manifest.outputs {
            println!("    {}  {}", &o.sha256[..16], o.path.display());
        }
        let again = replay(&config.output_dir.join(command.manifest_name()), Some(&root.join("replay")))?;
        assert_eq!(again.outputs, manifest.outputs);
    }
    println!("all outputs reproduced byte for byte under {}", root.display());
    Ok(())
}
