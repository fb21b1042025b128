fn main() {
    std::process::exit(latent_trees::cli::run(std::env::args_os()));
}
