fn main() {
    std::process::exit(eegcodec::cli::main(std::env::args_os()));
}
