fn main() {
    std::process::exit(muse_ooc::cli::run(std::env::args_os()));
}
