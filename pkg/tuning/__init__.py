"""Transfer strategies (FT, LP, IP, EP, Adapter, IPET), freezing and parameter accounting."""
