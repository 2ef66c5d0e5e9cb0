use std::io::Write;

fn main() {
    let verbosity = std::env::args()
        .filter(|a| a.starts_with('-') && !a.starts_with("--") && a[1..].chars().all(|c| c == 'v'))
        .map(|a| a.len() - 1)
        .sum::<usize>();
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let mut out = Vec::new();
    let code = saba::cli::run_with(std::env::args_os(), |k| std::env::var(k).ok(), &mut out);
    let text = String::from_utf8_lossy(&out);
    if code == 0 {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
    let _ = std::io::stdout().flush();
    std::process::exit(code);
}
