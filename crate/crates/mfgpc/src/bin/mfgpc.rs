fn main() {
    std::process::exit(mfgpc::cli::run(std::env::args_os()));
}
