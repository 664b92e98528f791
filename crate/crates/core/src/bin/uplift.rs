fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("UPLIFT_LOG", "warn")).init();
    std::process::exit(uplift::cli::cli_dispatch(std::env::args_os()));
}
