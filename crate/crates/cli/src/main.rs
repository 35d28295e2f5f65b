fn main() {
    std::process::exit(imfn_cli::run(std::env::args_os()));
}
