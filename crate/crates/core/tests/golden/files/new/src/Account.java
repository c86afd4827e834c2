package bank;

import java.util.List;

public class Account {
    private final String owner;
    private long balance;

    public Account(String owner) {
        this.owner = owner;
    }

    public long getBalance() {
        return balance;
    }

    public void deposit(int amount) {
        balance += amount;
    }
}
