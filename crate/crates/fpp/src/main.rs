fn main() {
    let args: Vec<String> = std::env::args().collect();
    let env = std::env::var(fpp::cli::THREADS_ENV).ok();
    std::process::exit(fpp::cli::main_with(&args, env.as_deref()));
}
