fn main() {
    std::process::exit(dora_cli::run_command(std::env::args_os()));
}
