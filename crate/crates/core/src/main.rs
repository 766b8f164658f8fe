use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or(mirrorflow::cli::LOG_ENV, "warn")).init();
    std::process::exit(mirrorflow::cli::main_with_args(std::env::args_os()));
}
