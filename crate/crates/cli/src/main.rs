fn main() {
    std::process::exit(fusionvote_cli::run(std::env::args_os()));
}
