fn main() {
    std::process::exit(topicflow::cli::main_entry());
}
