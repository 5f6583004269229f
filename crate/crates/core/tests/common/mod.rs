pub use fusionvote::gradcheck;
