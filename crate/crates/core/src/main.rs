fn main() {
    std::process::exit(satsurf::cli::run_command(std::env::args_os()));
}
