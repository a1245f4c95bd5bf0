fn main() {
    std::process::exit(seqot::cli::run(std::env::args_os()));
}
