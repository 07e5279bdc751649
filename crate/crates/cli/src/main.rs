fn main() {
    std::process::exit(histoseg_cli::main_exit_code());
}
