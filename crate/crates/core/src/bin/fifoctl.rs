fn main() {
    std::process::exit(fifo_control::cli::main(std::env::args_os()));
}
