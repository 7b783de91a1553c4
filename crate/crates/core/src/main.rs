fn main() {
    std::process::exit(spnkit::cli::run(std::env::args_os().skip(1)));
}
