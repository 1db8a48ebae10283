fn main() {
    std::process::exit(alfamix_cli::cli_main(std::env::args_os()));
}
