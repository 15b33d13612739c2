# Test package for pfrlab
