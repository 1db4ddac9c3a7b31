fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("GPFF_LOG", "warn")).init();
    std::process::exit(gpff::cli::run(std::env::args_os()));
}
