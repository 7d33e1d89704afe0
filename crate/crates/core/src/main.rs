fn main() { std::process::exit(semnet::cli::main()); }
