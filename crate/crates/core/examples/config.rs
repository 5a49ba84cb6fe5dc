//! Loads the shipped scenario configs and prints the settings they resolve to.

use std::path::Path;

use demediate::config::Config;

fn main() -> demediate::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|source| demediate::Error::Io { path: dir.clone(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    for p in paths {
        let cfg = Config::from_path(&p)?;
        let s = &cfg.study;
        println!(
            "{}: e_dm {} nsim {} bootstrap {} jackknife {} seed {} ie {:?}{}{}",
            p.file_name().unwrap().to_string_lossy(),
            s.params.e_dm,
            s.nsim,
            s.bootstrap.unwrap_or(0),
            s.jackknife,
            s.master_seed,
            s.params.ie_mechanism,
            if cfg.calibrate.is_some() { " calibrated" } else { "" },
            if cfg.grid.is_some() { " grid" } else { "" },
        );
    }
    Ok(())
}
