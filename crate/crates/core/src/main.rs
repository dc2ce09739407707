fn main() {
    std::process::exit(avloc::cli::run(std::env::args_os()));
}
