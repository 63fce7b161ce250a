fn main() {
    std::process::exit(hive_cli::run(std::env::args_os()));
}
