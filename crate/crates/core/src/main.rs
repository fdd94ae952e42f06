fn main() {
    std::process::exit(treecoder::cli::run_cli(std::env::args_os()));
}
