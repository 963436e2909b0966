use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::Arc;

use qddrive::cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let shutdown = Arc::new(AtomicBool::new(false));
    let presses = AtomicU32::new(0);
    let flag = shutdown.clone();
    let handler = ctrlc::set_handler(move || {
        if presses.fetch_add(1, Ordering::AcqRel) == 0 {
            eprintln!("interrupt: stopping after the current tick (again to force)");
            flag.store(true, Ordering::Release);
        } else {
            eprintln!("interrupt: forcing exit");
            cli::emergency_stop();
            std::process::exit(cli::EXIT_FORCED);
        }
    });
    if let Err(e) = handler {
        log::warn!("cannot install interrupt handler: {e}");
    }
    let code = cli::run_cli(
        std::env::args_os(),
        shutdown,
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    );
    std::process::exit(code);
}
